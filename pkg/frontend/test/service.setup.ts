/**
 * Global setup: start the Python service with the offline demo configuration
 * so the roundtrip test exercises the real HTTP path. Skipped (service vars
 * left unset) if python3 is unavailable.
 */
import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import { mkdtempSync, cpSync } from "node:fs";
import { tmpdir } from "node:os";
import { join, resolve } from "node:path";

const PORT = 8137;
const REPO_ROOT = resolve(__dirname, "..", "..");

let service: ChildProcess | undefined;

async function waitForHealth(baseUrl: string, attempts = 60): Promise<boolean> {
  for (let i = 0; i < attempts; i++) {
    try {
      const response = await fetch(`${baseUrl}/api/health`);
      if (response.ok) return true;
    } catch {
      // not up yet
    }
    await new Promise((r) => setTimeout(r, 250));
  }
  return false;
}

export async function setup(): Promise<void> {
  const probe = spawnSync("python3", ["-c", "import hpcqa"], { encoding: "utf-8" });
  if (probe.status !== 0) {
    console.warn("[service.setup] hpcqa package not importable; roundtrip tests will fail");
    return;
  }
  // Work on a copy of the demo so repeated runs stay hermetic.
  const work = mkdtempSync(join(tmpdir(), "hpcqa-frontend-"));
  cpSync(join(REPO_ROOT, "demo"), work, { recursive: true });
  const config = join(work, "hpcqa.yaml");

  const ingest = spawnSync("python3", ["-m", "hpcqa.cli", "--config", config, "ingest"], {
    encoding: "utf-8",
  });
  if (ingest.status !== 0) {
    throw new Error(`demo ingest failed:\n${ingest.stdout}\n${ingest.stderr}`);
  }

  service = spawn(
    "python3",
    ["-m", "hpcqa.cli", "--config", config, "serve", "--port", String(PORT)],
    { stdio: ["ignore", "pipe", "pipe"] },
  );
  const baseUrl = `http://127.0.0.1:${PORT}`;
  const healthy = await waitForHealth(baseUrl);
  if (!healthy) {
    service.kill("SIGKILL");
    throw new Error("service did not become healthy");
  }
  process.env.HPCQA_TEST_BASE_URL = baseUrl;
}

export async function teardown(): Promise<void> {
  if (service && !service.killed) {
    service.kill("SIGTERM");
    await new Promise((r) => setTimeout(r, 200));
    if (!service.killed) service.kill("SIGKILL");
  }
}
