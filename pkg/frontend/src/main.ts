/** Browser entry point: a small setup bar plus the session view. */

import { SessionApi } from "./api.js";
import { AuditApp } from "./app.js";

function query<T extends HTMLElement>(selector: string): T {
  const node = document.querySelector<T>(selector);
  if (!node) throw new Error(`missing element ${selector}`);
  return node;
}

export function bootstrap(): void {
  const form = query<HTMLFormElement>("#setup-form");
  const root = query<HTMLElement>("#session-root");
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const base = query<HTMLInputElement>("#service-url").value.trim();
    const seed = query<HTMLInputElement>("#seed").value.trim();
    const riskLimit = Number(query<HTMLInputElement>("#risk-limit").value);
    const gamma = Number(query<HTMLInputElement>("#gamma").value);
    const tolerance = Number(query<HTMLInputElement>("#error-tolerance").value);
    const app = new AuditApp(root, new SessionApi(base));
    void app
      .start({
        seed,
        risk_limit: riskLimit,
        gamma,
        error_tolerance: tolerance,
      })
      .then(() => app.startPolling())
      .catch((error) => {
        root.textContent = `failed to create the session: ${error}`;
      });
  });
}

if (typeof document !== "undefined" && document.readyState !== "loading") {
  bootstrap();
} else if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", bootstrap);
}
