import { ApiClient, resolveBaseUrl } from "./api.js";
import { ChatView } from "./ui.js";

function renderHeader(root: HTMLElement, client: ApiClient): void {
  const header = document.createElement("header");
  header.className = "app-header";
  const title = document.createElement("span");
  title.className = "app-title";
  title.textContent = "Cluster assistant";
  const status = document.createElement("span");
  status.className = "app-status";
  status.textContent = "connecting…";
  header.appendChild(title);
  header.appendChild(status);
  root.appendChild(header);

  client
    .health()
    .then((health) => {
      status.textContent = `${health.status} · ${health.corpus_chunks} chunks · ${health.registry_size} commands`;
      status.classList.add("ok");
    })
    .catch(() => {
      status.textContent = "service unreachable";
      status.classList.add("down");
    });
}

export function bootstrap(root: HTMLElement): ChatView {
  const client = new ApiClient(resolveBaseUrl());
  renderHeader(root, client);
  const chatRoot = document.createElement("main");
  chatRoot.className = "chat-root";
  root.appendChild(chatRoot);
  return new ChatView(chatRoot, client);
}

const appRoot = document.getElementById("app");
if (appRoot) {
  bootstrap(appRoot);
}
