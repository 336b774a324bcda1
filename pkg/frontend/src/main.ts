import { SessionApi } from "./api.js";
import { StudyController } from "./controller.js";
import { StudyView } from "./ui.js";

const api = new SessionApi("");
const controller = new StudyController(api, window.sessionStorage);
const root = document.getElementById("app");
if (!root) throw new Error("missing #app container");
const view = new StudyView(root, controller);
view.render();
void controller.init();
