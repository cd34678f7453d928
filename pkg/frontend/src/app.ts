import { ServiceClient, ServiceError } from "./client.js";
import {
  SessionState,
  compareInputs,
  newSession,
  selectStep,
  uploadAndInstruct,
} from "./session.js";

// Browser wiring: one session per page load, one in-flight restore at a time.

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function pngSrc(b64: string): string {
  return `data:image/png;base64,${b64}`;
}

async function fileToBase64(file: File): Promise<string> {
  const buf = new Uint8Array(await file.arrayBuffer());
  let binary = "";
  const chunk = 0x8000;
  for (let i = 0; i < buf.length; i += chunk) {
    binary += String.fromCharCode(...buf.subarray(i, i + chunk));
  }
  return btoa(binary);
}

export class StudioApp {
  private state: SessionState | null = null;

  constructor(private readonly client: ServiceClient) {}

  async start(): Promise<void> {
    const info = await this.client.tasks().catch((e: unknown) => {
      this.setStatus(`service unreachable: ${String(e)}`, true);
      return null;
    });
    if (info) {
      this.setStatus(`connected (${info.task_set}: ${info.tasks.join(", ")})`);
    }

    el<HTMLInputElement>("image-input").addEventListener("change", (ev) => {
      const input = ev.target as HTMLInputElement;
      const file = input.files?.[0];
      if (file) void this.loadImage(file);
    });
    el<HTMLFormElement>("instruct-form").addEventListener("submit", (ev) => {
      ev.preventDefault();
      void this.submitInstruction();
    });
  }

  private setStatus(text: string, isError = false): void {
    const node = el<HTMLParagraphElement>("status");
    node.textContent = text;
    node.className = isError ? "status error" : "status";
  }

  private async loadImage(file: File): Promise<void> {
    const b64 = await fileToBase64(file);
    this.state = newSession(b64);
    this.render();
    this.setStatus("image loaded; type an instruction");
  }

  private async submitInstruction(): Promise<void> {
    if (!this.state) {
      this.setStatus("upload an image first", true);
      return;
    }
    const box = el<HTMLInputElement>("instruction");
    const instruction = box.value.trim();
    if (!instruction) {
      this.setStatus("instruction must not be empty", true);
      return;
    }
    const submit = el<HTMLButtonElement>("submit");
    submit.disabled = true;
    this.state = { ...this.state, pending: true };
    this.setStatus("restoring…");
    try {
      this.state = await uploadAndInstruct(
        { ...this.state, pending: false },
        this.client,
        instruction,
      );
      box.value = "";
      this.render();
      this.setStatus("done");
    } catch (err) {
      this.state = { ...this.state, pending: false };
      const detail =
        err instanceof ServiceError && err.status
          ? `${err.status}: ${err.message}`
          : String(err);
      this.setStatus(`restore failed (${detail}) — try again`, true);
    } finally {
      submit.disabled = false;
    }
  }

  private render(): void {
    const state = this.state;
    if (!state) return;

    const history = el<HTMLOListElement>("history");
    history.replaceChildren();
    const originalItem = document.createElement("li");
    const originalLink = document.createElement("a");
    originalLink.href = "#";
    originalLink.textContent = "original image";
    originalLink.addEventListener("click", (ev) => {
      ev.preventDefault();
      this.state = selectStep(state, -1);
      this.render();
    });
    if (state.selectedStep === -1) originalItem.className = "selected";
    originalItem.appendChild(originalLink);
    history.appendChild(originalItem);

    state.steps.forEach((step, i) => {
      const item = document.createElement("li");
      const link = document.createElement("a");
      link.href = "#";
      link.textContent =
        `${step.instruction} — ${step.predictedTask} ` +
        `(${(step.confidence * 100).toFixed(1)}%)` +
        (step.parent !== state.steps.length - 1 && step.parent !== i - 1
          ? ` [from step ${step.parent === -1 ? "original" : step.parent}]`
          : "");
      link.addEventListener("click", (ev) => {
        ev.preventDefault();
        this.state = selectStep(state, i);
        this.render();
      });
      if (state.selectedStep === i) item.className = "selected";
      item.appendChild(link);
      history.appendChild(item);
    });

    const before = el<HTMLImageElement>("before");
    const after = el<HTMLImageElement>("after");
    const intent = el<HTMLParagraphElement>("intent");
    const download = el<HTMLAnchorElement>("download");
    if (state.selectedStep === -1) {
      before.src = pngSrc(state.originalImageB64);
      after.src = pngSrc(state.originalImageB64);
      intent.textContent = "original image";
      download.hidden = true;
    } else {
      const view = compareInputs(state, state.selectedStep);
      before.src = pngSrc(view.before);
      after.src = pngSrc(view.after);
      intent.textContent =
        `intent: ${view.step.predictedTask} ` +
        `(confidence ${(view.step.confidence * 100).toFixed(1)}%)`;
      // exact service bytes: the data URL carries the base64 payload verbatim
      download.href = pngSrc(view.step.imageB64);
      download.download = `restored-step-${state.selectedStep}.png`;
      download.hidden = false;
    }
  }
}

export function mount(baseUrl?: string): void {
  const url =
    baseUrl ??
    new URLSearchParams(window.location.search).get("service") ??
    "http://127.0.0.1:8787";
  const app = new StudioApp(new ServiceClient(url));
  void app.start();
}
