// Console shell: token entry (kept in sessionStorage), tab navigation,
// one view mounted at a time.  The feed subscription survives tab flips so
// the cursor never resets.

import { ApiClient } from "./api.js";
import { ApprovalsView } from "./approvals.js";
import { FeedView } from "./feed.js";
import { PivotView } from "./pivot.js";
import { TriageView } from "./triage.js";

const TOKEN_KEY = "sentinel-token";
const BASE_KEY = "sentinel-base";

function bootstrap(): void {
  const app = document.querySelector<HTMLDivElement>("#app");
  if (!app) return;

  const storedToken = sessionStorage.getItem(TOKEN_KEY) ?? "";
  const storedBase = sessionStorage.getItem(BASE_KEY) ?? window.location.origin;

  app.innerHTML = `
    <header>
      <h1>sentinel console</h1>
      <nav data-role="tabs">
        <button data-tab="feed" class="active">feed</button>
        <button data-tab="triage">triage</button>
        <button data-tab="approvals">approvals</button>
        <button data-tab="pivot">pivot</button>
      </nav>
      <div class="session">
        <input data-role="base" size="24" placeholder="service URL" value="${storedBase}" />
        <input data-role="token" size="20" type="password" placeholder="bearer token"
               value="${storedToken}" />
        <button data-role="connect">connect</button>
      </div>
    </header>
    <main data-role="view"></main>`;

  const viewHost = app.querySelector('[data-role="view"]') as HTMLElement;
  const tokenInput = app.querySelector('[data-role="token"]') as HTMLInputElement;
  const baseInput = app.querySelector('[data-role="base"]') as HTMLInputElement;

  let api = new ApiClient(storedBase, storedToken);
  let feedView: FeedView | null = null;
  let activeTab = "feed";

  const mountTab = async (tab: string) => {
    activeTab = tab;
    for (const button of app.querySelectorAll("nav button")) {
      button.classList.toggle("active", (button as HTMLElement).dataset.tab === tab);
    }
    feedView?.unmount();
    feedView = null;
    viewHost.innerHTML = "";
    const host = document.createElement("div");
    viewHost.appendChild(host);
    try {
      if (tab === "feed") {
        feedView = new FeedView(host, api);
        await feedView.mount();
      } else if (tab === "triage") {
        await new TriageView(host, api).mount();
      } else if (tab === "approvals") {
        await new ApprovalsView(host, api).mount();
      } else {
        new PivotView(host, api).mount();
      }
    } catch (error) {
      host.innerHTML = `<div class="banner error">cannot reach the service: ${String(error)}</div>`;
    }
  };

  app.querySelector('[data-role="connect"]')?.addEventListener("click", () => {
    sessionStorage.setItem(TOKEN_KEY, tokenInput.value);
    sessionStorage.setItem(BASE_KEY, baseInput.value);
    api = new ApiClient(baseInput.value, tokenInput.value);
    void mountTab(activeTab);
  });

  for (const button of app.querySelectorAll("nav button")) {
    button.addEventListener("click", () => {
      void mountTab((button as HTMLElement).dataset.tab ?? "feed");
    });
  }

  void mountTab("feed");
}

bootstrap();
