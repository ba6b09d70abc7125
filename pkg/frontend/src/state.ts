/**
 * Editor state and the debounced overlay scheduler.
 *
 * Every pose change is debounced (>= 100 ms, so at most 10 requests/second
 * per plane) into one render + NCC request per plane. At most one request
 * pair is in flight per plane; responses that no longer match the latest
 * scheduled pose (by sequence number) are discarded, so the overlay always
 * corresponds to the pose in the numeric readout.
 */

import { clonePose, Pose, PlaneId, poseToArray } from "./pose";

export interface OverlayUpdate {
  plane: PlaneId;
  image: Blob;
  ncc: number | null;
  pose: number[];
  seq: number;
}

export interface RenderBackend {
  render(plane: PlaneId, pose: number[]): Promise<Blob>;
  ncc(plane: PlaneId, pose: number[]): Promise<number | null>;
}

const PLANES: PlaneId[] = ["a", "b"];

export class OverlayScheduler {
  private seq = 0;
  private latestPose: Pose | null = null;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private inFlight = new Map<PlaneId, boolean>();
  private rerunAfter = new Map<PlaneId, boolean>();
  private delivered = new Map<PlaneId, number>();
  private idleResolvers: (() => void)[] = [];

  constructor(
    private readonly backend: RenderBackend,
    private readonly onUpdate: (update: OverlayUpdate) => void,
    private readonly onError: (err: unknown) => void = () => {},
    private readonly debounceMs = 100,
  ) {}

  /** Schedule a refresh of both planes for the given pose. */
  poseChanged(pose: Pose): void {
    this.latestPose = clonePose(pose);
    this.seq += 1;
    if (this.timer !== null) {
      clearTimeout(this.timer);
    }
    this.timer = setTimeout(() => {
      this.timer = null;
      for (const plane of PLANES) {
        void this.refresh(plane);
      }
    }, this.debounceMs);
  }

  /** True while a debounce or request is pending anywhere. */
  get busy(): boolean {
    return (
      this.timer !== null ||
      PLANES.some((p) => this.inFlight.get(p) || this.rerunAfter.get(p))
    );
  }

  /** Resolves once all scheduled work has been delivered. */
  idle(): Promise<void> {
    if (!this.busy) {
      return Promise.resolve();
    }
    return new Promise((resolve) => this.idleResolvers.push(resolve));
  }

  private notifyIfIdle(): void {
    if (!this.busy) {
      const resolvers = this.idleResolvers;
      this.idleResolvers = [];
      for (const r of resolvers) {
        r();
      }
    }
  }

  private async refresh(plane: PlaneId): Promise<void> {
    if (this.inFlight.get(plane)) {
      this.rerunAfter.set(plane, true);
      return;
    }
    if (this.latestPose === null) {
      return;
    }
    const seq = this.seq;
    const pose = poseToArray(this.latestPose);
    this.inFlight.set(plane, true);
    try {
      const [image, ncc] = await Promise.all([
        this.backend.render(plane, pose),
        this.backend.ncc(plane, pose),
      ]);
      // drop stale responses: a newer pose has been delivered or scheduled
      if (seq >= (this.delivered.get(plane) ?? 0)) {
        this.delivered.set(plane, seq);
        this.onUpdate({ plane, image, ncc, pose, seq });
      }
    } catch (err) {
      this.onError(err);
    } finally {
      this.inFlight.set(plane, false);
      if (this.rerunAfter.get(plane)) {
        this.rerunAfter.set(plane, false);
        if (this.seq > (this.delivered.get(plane) ?? 0)) {
          void this.refresh(plane);
          return;
        }
      }
      this.notifyIfIdle();
    }
  }
}

export interface UiPoseState {
  pose: Pose;
  opacity: number; // [0, 1]
  activePlane: PlaneId;
  stepMm: number;
  stepDeg: number;
  dirty: boolean; // pose changed since the last delivered overlay pair
}

export function initialState(pose: Pose): UiPoseState {
  return {
    pose: clonePose(pose),
    opacity: 0.5,
    activePlane: "a",
    stepMm: 0.5,
    stepDeg: 0.5,
    dirty: false,
  };
}
