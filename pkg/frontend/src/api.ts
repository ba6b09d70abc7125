/** Typed client for the manual-registration HTTP API. */

export interface TrialSummary {
  trial_id: string;
  activity: string;
  has_manual: boolean;
}

export interface PoseRecords {
  target: number[];
  auto: number[] | null;
  manual: number[] | null;
}

export type CommitResult =
  | { ok: true }
  | { ok: false; status: number; detail: string };

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    message: string,
  ) {
    super(`HTTP ${status}: ${message}`);
  }
}

type FetchFn = typeof fetch;

async function errorDetail(res: Response): Promise<string> {
  try {
    const body = (await res.json()) as { detail?: string };
    return body.detail ?? res.statusText;
  } catch {
    return res.statusText;
  }
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchFn = fetch,
  ) {}

  private async getJson<T>(path: string): Promise<T> {
    const res = await this.fetchFn(this.baseUrl + path);
    if (!res.ok) {
      throw new ApiError(res.status, await errorDetail(res));
    }
    return (await res.json()) as T;
  }

  private async postJson(path: string, body: unknown): Promise<Response> {
    return this.fetchFn(this.baseUrl + path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  listTrials(): Promise<TrialSummary[]> {
    return this.getJson("/api/trials");
  }

  imageUrl(trial: string, plane: string): string {
    return `${this.baseUrl}/api/image/${trial}/${plane}`;
  }

  async fetchImage(trial: string, plane: string): Promise<Blob> {
    const res = await this.fetchFn(this.imageUrl(trial, plane));
    if (!res.ok) {
      throw new ApiError(res.status, await errorDetail(res));
    }
    return res.blob();
  }

  async renderOverlay(
    trial: string,
    plane: string,
    pose: number[],
    downscale = 4,
  ): Promise<Blob> {
    const res = await this.postJson("/api/render", { trial, plane, pose, downscale });
    if (!res.ok) {
      throw new ApiError(res.status, await errorDetail(res));
    }
    return res.blob();
  }

  async ncc(trial: string, plane: string, pose: number[]): Promise<number | null> {
    const res = await this.postJson("/api/ncc", { trial, plane, pose });
    if (!res.ok) {
      throw new ApiError(res.status, await errorDetail(res));
    }
    const body = (await res.json()) as { ncc: number | null };
    return body.ncc;
  }

  getPoses(trial: string): Promise<PoseRecords> {
    return this.getJson(`/api/pose/${trial}`);
  }

  async commitManual(
    trial: string,
    pose: number[],
    nccA: number,
    nccB: number,
  ): Promise<CommitResult> {
    const res = await this.postJson(`/api/pose/${trial}/manual`, {
      pose,
      ncc_a: nccA,
      ncc_b: nccB,
    });
    if (res.ok) {
      return { ok: true };
    }
    return { ok: false, status: res.status, detail: await errorDetail(res) };
  }
}
