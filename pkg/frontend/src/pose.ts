/**
 * Pose math for the manual-registration client.
 *
 * Poses are unit quaternions (w, x, y, z) plus translations in mm, matching
 * the server's 7-float wire format. All rotations the UI applies are small
 * world-frame perturbations composed onto the current pose.
 */

export type Vec3 = [number, number, number];
export type Quat = [number, number, number, number];

export interface Pose {
  q: Quat;
  t: Vec3;
}

export type PlaneId = "a" | "b";

export function normalizeQuat(q: Quat): Quat {
  const n = Math.hypot(q[0], q[1], q[2], q[3]);
  if (!isFinite(n) || n === 0) {
    throw new Error("cannot normalize a zero quaternion");
  }
  const s = q[0] < 0 ? -1 / n : 1 / n; // canonical sign: w >= 0
  // the + 0 turns any -0 produced by the sign flip into +0
  return [q[0] * s + 0, q[1] * s + 0, q[2] * s + 0, q[3] * s + 0];
}

export function quatMul(a: Quat, b: Quat): Quat {
  return [
    a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
    a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
    a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
    a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
  ];
}

export function quatFromAxisAngle(axis: Vec3, angleRad: number): Quat {
  const n = Math.hypot(axis[0], axis[1], axis[2]);
  if (n === 0) {
    return [1, 0, 0, 0];
  }
  const half = angleRad / 2;
  const s = Math.sin(half) / n;
  return [Math.cos(half), axis[0] * s, axis[1] * s, axis[2] * s];
}

export function clonePose(p: Pose): Pose {
  return { q: [...p.q] as Quat, t: [...p.t] as Vec3 };
}

export function poseToArray(p: Pose): number[] {
  const q = normalizeQuat(p.q);
  return [...q, ...p.t];
}

export function poseFromArray(a: number[]): Pose {
  if (a.length !== 7) {
    throw new Error(`pose array must have 7 entries, got ${a.length}`);
  }
  return {
    q: normalizeQuat([a[0], a[1], a[2], a[3]]),
    t: [a[4], a[5], a[6]],
  };
}

/**
 * Detector basis of a plane in world coordinates for the default rig
 * construction: plane "a" has u = +x, v = +y, normal = -z; plane "b" is
 * plane "a" rotated about +y by the inter-plane angle.
 */
export function detectorBasis(
  angleDeg: number,
  plane: PlaneId,
): { u: Vec3; v: Vec3; n: Vec3 } {
  if (plane === "a") {
    return { u: [1, 0, 0], v: [0, 1, 0], n: [0, 0, -1] };
  }
  const th = (angleDeg * Math.PI) / 180;
  const c = Math.cos(th);
  const s = Math.sin(th);
  // R_y(th) applied to the plane-a basis
  return { u: [c, 0, -s], v: [0, 1, 0], n: [-s, 0, -c] };
}

/** Translate by `dist` mm along a world axis. */
export function translatePose(p: Pose, axis: Vec3, dist: number): Pose {
  return {
    q: [...p.q] as Quat,
    t: [p.t[0] + axis[0] * dist, p.t[1] + axis[1] * dist, p.t[2] + axis[2] * dist],
  };
}

/** Rotate by `angleDeg` about a world axis (pre-multiplied perturbation). */
export function rotatePose(p: Pose, axis: Vec3, angleDeg: number): Pose {
  const dq = quatFromAxisAngle(axis, (angleDeg * Math.PI) / 180);
  return { q: normalizeQuat(quatMul(dq, p.q)), t: [...p.t] as Vec3 };
}
