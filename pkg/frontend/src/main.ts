import { ApiClient } from "./api";
import { App } from "./ui";

const root = document.getElementById("app");
if (root === null) {
  throw new Error("missing #app container");
}
const api = new ApiClient(window.location.origin);
const app = new App(api, root);
void app.init();
