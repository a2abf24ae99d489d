/** Canvas rendering of the pedestrian box and skeleton overlay.
 *
 * Colors follow the pre-label: green when the model says the person is
 * looking at the camera, red when not, gray while unknown.  Drawing goes
 * through a minimal context interface so tests can record calls without a
 * real canvas.
 */

import type { ReviewQueueItem } from "./types.js";

export const COLOR_LOOKING = "#2fbf4f";
export const COLOR_NOT_LOOKING = "#e04545";
export const COLOR_NEUTRAL = "#9aa0a6";

export const KEYPOINT_CONFIDENCE_THRESHOLD = 0.05;

/** COCO-17 skeleton edges as keypoint index pairs. */
export const SKELETON_EDGES: ReadonlyArray<readonly [number, number]> = [
  [3, 1], [1, 0], [0, 2], [2, 4],
  [5, 6], [5, 7], [7, 9], [6, 8], [8, 10],
  [5, 11], [6, 12], [11, 12],
  [11, 13], [13, 15], [12, 14], [14, 16],
];

/** Subset of CanvasRenderingContext2D the overlay uses. */
export interface Drawable2D {
  strokeStyle: string;
  fillStyle: string;
  lineWidth: number;
  font: string;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  stroke(): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  fill(): void;
  strokeRect(x: number, y: number, w: number, h: number): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  fillText(text: string, x: number, y: number): void;
}

export function overlayColor(preLabel: ReviewQueueItem["preLabel"]): string {
  if (preLabel === "looking") return COLOR_LOOKING;
  if (preLabel === "not_looking") return COLOR_NOT_LOOKING;
  return COLOR_NEUTRAL;
}

export interface ViewTransform {
  scale: number;
  dx: number;
  dy: number;
}

export function fitTransform(
  imageWidth: number,
  imageHeight: number,
  canvasWidth: number,
  canvasHeight: number,
): ViewTransform {
  const scale = Math.min(canvasWidth / imageWidth, canvasHeight / imageHeight);
  return {
    scale,
    dx: (canvasWidth - imageWidth * scale) / 2,
    dy: (canvasHeight - imageHeight * scale) / 2,
  };
}

export function renderOverlay(ctx: Drawable2D, item: ReviewQueueItem, view: ViewTransform): void {
  const color = overlayColor(item.preLabel);
  const tx = (u: number) => view.dx + u * view.scale;
  const ty = (v: number) => view.dy + v * view.scale;

  const [bx, by, bw, bh] = item.bbox;
  ctx.strokeStyle = color;
  ctx.lineWidth = 2;
  ctx.strokeRect(tx(bx), ty(by), bw * view.scale, bh * view.scale);

  if (item.keypoints === null) return; // box-only overlay when no pose exists

  const kps = item.keypoints;
  const visible = (i: number) => kps[i][2] > KEYPOINT_CONFIDENCE_THRESHOLD;
  for (const [a, b] of SKELETON_EDGES) {
    if (!visible(a) || !visible(b)) continue;
    ctx.beginPath();
    ctx.moveTo(tx(kps[a][0]), ty(kps[a][1]));
    ctx.lineTo(tx(kps[b][0]), ty(kps[b][1]));
    ctx.stroke();
  }
  ctx.fillStyle = color;
  for (let i = 0; i < kps.length; i += 1) {
    if (!visible(i)) continue;
    ctx.beginPath();
    ctx.arc(tx(kps[i][0]), ty(kps[i][1]), 3, 0, 2 * Math.PI);
    ctx.fill();
  }
}

/** Dark placeholder shown while the image pixels are missing; the skeleton
 * still renders on top so review can proceed. */
export function renderPlaceholder(ctx: Drawable2D, width: number, height: number): void {
  ctx.fillStyle = "#1c1f24";
  ctx.fillRect(0, 0, width, height);
  ctx.fillStyle = "#9aa0a6";
  ctx.font = "14px sans-serif";
  ctx.fillText("media unavailable (retry pending)", 12, 24);
}
