/** Thin typed client for the review service; all label state lives server-side. */

import type {
  ApiImage,
  ImagePage,
  Progress,
  VoteResponse,
  VoteValue,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** The slice of the client a review session needs; lets tests supply fakes. */
export interface ReviewApi {
  fetchAllImages(split?: string): Promise<import("./types.js").ApiImage[]>;
  submitVote(
    imageId: string,
    instanceIndex: number,
    annotatorId: string,
    vote: import("./types.js").VoteValue,
  ): Promise<import("./types.js").VoteResponse>;
}

async function raiseForStatus(response: Response): Promise<Response> {
  if (!response.ok) {
    let detail = response.statusText;
    try {
      const body = (await response.json()) as { detail?: string };
      if (body && typeof body.detail === "string") detail = body.detail;
    } catch {
      // non-JSON error body: keep the status text
    }
    throw new ApiError(response.status, detail);
  }
  return response;
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async getJson<T>(path: string): Promise<T> {
    const response = await raiseForStatus(await this.fetchFn(`${this.baseUrl}${path}`));
    return (await response.json()) as T;
  }

  listImages(opts: { split?: string; offset?: number; limit?: number } = {}): Promise<ImagePage> {
    const params = new URLSearchParams();
    if (opts.split !== undefined) params.set("split", opts.split);
    if (opts.offset !== undefined) params.set("offset", String(opts.offset));
    if (opts.limit !== undefined) params.set("limit", String(opts.limit));
    const qs = params.toString();
    return this.getJson<ImagePage>(`/api/v1/images${qs ? `?${qs}` : ""}`);
  }

  getImage(imageId: string): Promise<ApiImage> {
    return this.getJson<ApiImage>(`/api/v1/images/${imageId}`);
  }

  progress(): Promise<Progress> {
    return this.getJson<Progress>("/api/v1/progress");
  }

  async exportDataset(): Promise<string> {
    const response = await raiseForStatus(await this.fetchFn(`${this.baseUrl}/api/v1/export`));
    return response.text();
  }

  async submitVote(
    imageId: string,
    instanceIndex: number,
    annotatorId: string,
    vote: VoteValue,
  ): Promise<VoteResponse> {
    const response = await raiseForStatus(
      await this.fetchFn(
        `${this.baseUrl}/api/v1/images/${imageId}/instances/${instanceIndex}/votes`,
        {
          method: "POST",
          headers: { "Content-Type": "application/json" },
          body: JSON.stringify({ annotator_id: annotatorId, vote }),
        },
      ),
    );
    return (await response.json()) as VoteResponse;
  }

  /** Page through the listing and fetch every full image record. */
  async fetchAllImages(split?: string): Promise<ApiImage[]> {
    const images: ApiImage[] = [];
    let offset = 0;
    const limit = 50;
    for (;;) {
      const page = await this.listImages({ split, offset, limit });
      for (const summary of page.items) {
        images.push(await this.getImage(summary.image_id));
      }
      offset += page.items.length;
      if (offset >= page.total || page.items.length === 0) break;
    }
    return images;
  }

  mediaUrl(imageId: string): string {
    return `${this.baseUrl}/media/${imageId}`;
  }
}
