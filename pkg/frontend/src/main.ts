/** Browser entry point: wires the session, canvas overlay and keyboard. */

import { ApiClient } from "./api.js";
import { actionForKey } from "./keyboard.js";
import {
  Drawable2D,
  fitTransform,
  renderOverlay,
  renderPlaceholder,
} from "./overlay.js";
import type { QueueOrder } from "./queue.js";
import { ReviewSession } from "./session.js";
import { expectedLabelState } from "./consensus.js";

const CANVAS_W = 960;
const CANVAS_H = 600;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function annotatorIdFromStorage(): string {
  let id = localStorage.getItem("annotator_id");
  if (!id) {
    id = window.prompt("annotator id:", `annotator-${Math.floor(Math.random() * 1e6)}`) ?? "";
    if (id) localStorage.setItem("annotator_id", id);
  }
  return id;
}

class App {
  private readonly client = new ApiClient("");
  private readonly session: ReviewSession;
  private readonly canvas: HTMLCanvasElement;
  private readonly ctx: CanvasRenderingContext2D;
  private readonly media = new Map<string, HTMLImageElement | "missing">();

  constructor(annotatorId: string, order: QueueOrder) {
    this.session = new ReviewSession(this.client, annotatorId, order);
    this.canvas = el<HTMLCanvasElement>("view");
    this.canvas.width = CANVAS_W;
    this.canvas.height = CANVAS_H;
    const ctx = this.canvas.getContext("2d");
    if (!ctx) throw new Error("canvas 2d context unavailable");
    this.ctx = ctx;
  }

  async start(): Promise<void> {
    await this.session.load();
    window.addEventListener("keydown", (event) => void this.onKey(event.key));
    el<HTMLElement>("annotator").textContent = this.session.annotatorId;
    window.setInterval(() => void this.session.retryPending(), 5000);
    await this.refresh();
  }

  private async onKey(key: string): Promise<void> {
    const action = actionForKey(key);
    if (!action) return;
    if (action.kind === "vote") await this.session.vote(action.vote);
    else if (action.kind === "next") this.session.advance();
    else this.session.back();
    await this.refresh();
  }

  private loadMedia(imageId: string): HTMLImageElement | "missing" | undefined {
    const cached = this.media.get(imageId);
    if (cached !== undefined) return cached;
    const img = new Image();
    img.onload = () => {
      this.media.set(imageId, img);
      void this.refresh();
    };
    img.onerror = () => {
      this.media.set(imageId, "missing");
      void this.refresh();
      window.setTimeout(() => {
        // periodic retry: drop the cache entry so the next refresh refetches
        this.media.delete(imageId);
      }, 15000);
    };
    img.src = this.client.mediaUrl(imageId);
    return undefined;
  }

  private async refresh(): Promise<void> {
    const item = this.session.current();
    const status = el<HTMLElement>("status");
    const notice = el<HTMLElement>("notices");
    notice.textContent = this.session.notices.slice(-3).join(" | ");

    const progress = await this.client.progress();
    el<HTMLElement>("progress").textContent =
      `labeled ${progress.labeled} / discarded ${progress.discarded} / ` +
      `pending ${progress.pending} (rev ${progress.revision})`;

    const drawable = this.ctx as unknown as Drawable2D;
    this.ctx.clearRect(0, 0, CANVAS_W, CANVAS_H);
    if (item === null) {
      renderPlaceholder(drawable, CANVAS_W, CANVAS_H);
      status.textContent = "queue finished for this annotator";
      return;
    }

    const media = this.loadMedia(item.imageId);
    const view = fitTransform(item.imageWidth, item.imageHeight, CANVAS_W, CANVAS_H);
    if (media instanceof HTMLImageElement) {
      this.ctx.drawImage(
        media,
        view.dx,
        view.dy,
        item.imageWidth * view.scale,
        item.imageHeight * view.scale,
      );
    } else {
      renderPlaceholder(drawable, CANVAS_W, CANVAS_H);
    }
    renderOverlay(drawable, item, view);

    const score = item.score !== null ? item.score.toFixed(3) : "n/a";
    const consensus =
      item.votes.length >= 4
        ? expectedLabelState(item.votes.map((v) => v.vote))
        : item.label;
    const badge = consensus !== null ? ` | consensus: ${consensus}` : "";
    status.textContent =
      `${item.imageId} #${item.instanceIndex} | pre-label: ${item.preLabel ?? "none"} ` +
      `(score ${score}) | votes: ${item.votes.length}/4${badge} | keys: 1=looking 2=not 3=ambiguous n/p=move`;
  }
}

async function boot(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const order = (params.get("order") === "sequential" ? "sequential" : "uncertainty") as QueueOrder;
  const annotator = params.get("annotator") ?? annotatorIdFromStorage();
  const app = new App(annotator, order);
  await app.start();
}

void boot();
