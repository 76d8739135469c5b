import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "happy-dom",
    globalSetup: ["test/service.setup.ts"],
    testTimeout: 30_000,
    hookTimeout: 60_000,
  },
});
