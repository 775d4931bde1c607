/** Page entry point: boot the app against #app, honoring an `?agent=` query
 * parameter for the agent URL.
 */

import { App, DEFAULT_AGENT_URL } from "./app.js";

const root = document.getElementById("app");
if (root) {
  const params = new URLSearchParams(window.location.search);
  new App({
    root,
    defaultAgentUrl: params.get("agent") ?? DEFAULT_AGENT_URL,
  });
}
