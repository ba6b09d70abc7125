/**
 * DOM client: trial browser, dual-plane overlay viewer, 6-DOF pose editor,
 * and manual-pose commit.
 *
 * The stored target image and the server-rendered silhouette are stacked
 * <img> elements; overlay opacity is CSS. The client never draws anything
 * itself — every overlay shown is a server render of the exact pose in the
 * numeric readout.
 */

import { ApiClient, TrialSummary } from "./api";
import {
  detectorBasis,
  Pose,
  PlaneId,
  poseFromArray,
  poseToArray,
  rotatePose,
  translatePose,
  Vec3,
} from "./pose";
import { initialState, OverlayScheduler, UiPoseState } from "./state";

const PLANES: PlaneId[] = ["a", "b"];

function blobUrl(blob: Blob): string {
  try {
    return URL.createObjectURL(blob);
  } catch {
    return ""; // non-browser DOM without object-URL support
  }
}

export class App {
  readonly state: UiPoseState;
  private readonly scheduler: OverlayScheduler;
  private trial: string | null = null;
  private latestSeq = 0;
  private deliveredSeq = new Map<PlaneId, number>();
  private nccShown = new Map<PlaneId, number | null>();

  private readonly trialList: HTMLUListElement;
  private readonly banner: HTMLDivElement;
  private readonly commitButton: HTMLButtonElement;
  private readonly poseReadout: HTMLElement;
  private readonly nccReadout = new Map<PlaneId, HTMLElement>();
  private readonly baseImg = new Map<PlaneId, HTMLImageElement>();
  private readonly overlayImg = new Map<PlaneId, HTMLImageElement>();
  private readonly opacitySlider: HTMLInputElement;

  constructor(
    private readonly api: ApiClient,
    private readonly root: HTMLElement,
    private readonly rigAngleDeg = 110,
  ) {
    const doc = root.ownerDocument;
    this.state = initialState({ q: [1, 0, 0, 0], t: [0, 0, 0] });

    this.banner = doc.createElement("div");
    this.banner.className = "banner";
    this.banner.hidden = true;
    root.appendChild(this.banner);

    this.trialList = doc.createElement("ul");
    this.trialList.className = "trials";
    root.appendChild(this.trialList);

    const viewer = doc.createElement("div");
    viewer.className = "viewer";
    for (const plane of PLANES) {
      const panel = doc.createElement("figure");
      panel.className = `plane plane-${plane}`;
      panel.addEventListener("click", () => this.setActivePlane(plane));
      const base = doc.createElement("img");
      base.className = "base";
      const overlay = doc.createElement("img");
      overlay.className = "overlay";
      overlay.style.opacity = String(this.state.opacity);
      const ncc = doc.createElement("figcaption");
      ncc.className = "ncc";
      ncc.textContent = "NCC: -";
      panel.append(base, overlay, ncc);
      viewer.appendChild(panel);
      this.baseImg.set(plane, base);
      this.overlayImg.set(plane, overlay);
      this.nccReadout.set(plane, ncc);
    }
    root.appendChild(viewer);

    this.poseReadout = doc.createElement("pre");
    this.poseReadout.className = "pose";
    root.appendChild(this.poseReadout);

    this.opacitySlider = doc.createElement("input");
    this.opacitySlider.type = "range";
    this.opacitySlider.min = "0";
    this.opacitySlider.max = "1";
    this.opacitySlider.step = "0.05";
    this.opacitySlider.value = String(this.state.opacity);
    this.opacitySlider.addEventListener("input", () => {
      this.setOpacity(Number(this.opacitySlider.value));
    });
    root.appendChild(this.opacitySlider);

    this.commitButton = doc.createElement("button");
    this.commitButton.className = "commit";
    this.commitButton.textContent = "Commit manual pose";
    this.commitButton.disabled = true;
    this.commitButton.addEventListener("click", () => void this.commit());
    root.appendChild(this.commitButton);

    doc.addEventListener("keydown", (e) => this.onKey(e as KeyboardEvent));

    this.scheduler = new OverlayScheduler(
      {
        render: (plane, pose) => this.api.renderOverlay(this.trial!, plane, pose),
        ncc: (plane, pose) => this.api.ncc(this.trial!, plane, pose),
      },
      (u) => {
        const img = this.overlayImg.get(u.plane)!;
        img.src = blobUrl(u.image);
        this.nccShown.set(u.plane, u.ncc);
        this.nccReadout.get(u.plane)!.textContent =
          u.ncc === null ? "NCC: out of frame" : `NCC: ${u.ncc.toFixed(4)}`;
        this.deliveredSeq.set(u.plane, u.seq);
        this.refreshDirty();
      },
      (err) => this.showBanner(`request failed: ${String(err)}`),
    );
  }

  async init(): Promise<void> {
    await this.refreshTrialList();
  }

  async refreshTrialList(): Promise<TrialSummary[]> {
    const trials = await this.api.listTrials();
    const doc = this.root.ownerDocument;
    this.trialList.textContent = "";
    for (const t of trials) {
      const li = doc.createElement("li");
      const button = doc.createElement("button");
      button.textContent = t.trial_id;
      button.dataset.trial = t.trial_id;
      button.addEventListener("click", () => void this.loadTrial(t.trial_id));
      li.appendChild(button);
      if (t.has_manual) {
        const badge = doc.createElement("span");
        badge.className = "badge";
        badge.textContent = "manual";
        li.appendChild(badge);
      }
      this.trialList.appendChild(li);
    }
    return trials;
  }

  /** Load a trial; the pose initializes to the auto pose when present. */
  async loadTrial(trialId: string): Promise<void> {
    this.trial = trialId;
    this.hideBanner();
    const poses = await this.api.getPoses(trialId);
    this.state.pose = poseFromArray(poses.auto ?? poses.target);
    for (const plane of PLANES) {
      this.baseImg.get(plane)!.src = this.api.imageUrl(trialId, plane);
      this.nccReadout.get(plane)!.textContent = "NCC: -";
      this.nccShown.set(plane, null);
      this.deliveredSeq.set(plane, 0);
    }
    this.schedulePose();
  }

  get currentTrial(): string | null {
    return this.trial;
  }

  setActivePlane(plane: PlaneId): void {
    this.state.activePlane = plane;
  }

  setOpacity(value: number): void {
    this.state.opacity = Math.min(1, Math.max(0, value));
    for (const plane of PLANES) {
      this.overlayImg.get(plane)!.style.opacity = String(this.state.opacity);
    }
  }

  /** Translate along the active plane's detector axis ("u" or "v"). */
  nudgeTranslation(axis: "u" | "v", steps: number): void {
    const basis = detectorBasis(this.rigAngleDeg, this.state.activePlane);
    this.state.pose = translatePose(
      this.state.pose,
      basis[axis],
      steps * this.state.stepMm,
    );
    this.schedulePose();
  }

  /** Rotate about one of the active plane's detector axes. */
  nudgeRotation(axis: "u" | "v" | "n", steps: number): void {
    const basis = detectorBasis(this.rigAngleDeg, this.state.activePlane);
    this.state.pose = rotatePose(
      this.state.pose,
      basis[axis] as Vec3,
      steps * this.state.stepDeg,
    );
    this.schedulePose();
  }

  onKey(e: KeyboardEvent): void {
    if (this.trial === null) {
      return;
    }
    const map: Record<string, () => void> = {
      ArrowRight: () => this.nudgeTranslation("u", 1),
      ArrowLeft: () => this.nudgeTranslation("u", -1),
      ArrowUp: () => this.nudgeTranslation("v", 1),
      ArrowDown: () => this.nudgeTranslation("v", -1),
      w: () => this.nudgeRotation("u", 1),
      s: () => this.nudgeRotation("u", -1),
      a: () => this.nudgeRotation("v", 1),
      d: () => this.nudgeRotation("v", -1),
      q: () => this.nudgeRotation("n", 1),
      e: () => this.nudgeRotation("n", -1),
    };
    const action = map[e.key];
    if (action) {
      action();
      e.preventDefault();
    }
  }

  /** Current pose as the 7-float wire format. */
  poseArray(): number[] {
    return poseToArray(this.state.pose);
  }

  displayedNcc(plane: PlaneId): number | null {
    return this.nccShown.get(plane) ?? null;
  }

  /** Resolves when all scheduled renders have been delivered. */
  settled(): Promise<void> {
    return this.scheduler.idle();
  }

  private schedulePose(): void {
    this.latestSeq += 1;
    this.state.dirty = true;
    this.commitButton.disabled = true;
    this.poseReadout.textContent = this.poseArray()
      .map((v) => v.toPrecision(9))
      .join(" ");
    this.scheduler.poseChanged(this.state.pose);
  }

  private refreshDirty(): void {
    const settled = PLANES.every(
      (p) => (this.deliveredSeq.get(p) ?? 0) >= this.latestSeq,
    );
    // commit stays disabled while a render for the shown pose is in flight
    if (settled) {
      this.state.dirty = false;
      this.commitButton.disabled = false;
    }
  }

  async commit(): Promise<{ ok: boolean; status?: number }> {
    if (this.trial === null || this.state.dirty || this.scheduler.busy) {
      return { ok: false };
    }
    const result = await this.api.commitManual(
      this.trial,
      this.poseArray(),
      this.nccShown.get("a") ?? NaN,
      this.nccShown.get("b") ?? NaN,
    );
    if (result.ok) {
      this.hideBanner();
      await this.refreshTrialList();
      return { ok: true };
    }
    if (result.status === 409) {
      // the earlier committed pose wins; keep the local pose, tell the user
      this.showBanner("conflict: a manual pose was already committed for this trial");
      await this.refreshTrialList();
    } else {
      this.showBanner(`commit failed: ${result.detail}`);
    }
    return { ok: false, status: result.status };
  }

  get bannerText(): string | null {
    return this.banner.hidden ? null : this.banner.textContent;
  }

  private showBanner(message: string): void {
    this.banner.textContent = message;
    this.banner.hidden = false;
  }

  private hideBanner(): void {
    this.banner.hidden = true;
    this.banner.textContent = "";
  }
}
