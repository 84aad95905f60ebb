import { EditorView } from "./ui.js";

const view = new EditorView("");
view.init().catch((err) => {
  const toast = document.getElementById("error-toast");
  if (toast) {
    toast.textContent = `failed to reach the service: ${err}`;
    (toast as HTMLElement).style.display = "";
  }
});
