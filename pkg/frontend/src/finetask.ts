// Click-pair collection for the fine task: first click snaps to an
// annotated feature, second click marks where it should go.

import { Annotation, FinePair, FineTaskMessage, makeFineTask } from "./schema.js";
import { SNAP_RADIUS_PX, snapToAnnotation } from "./pick.js";

export const MAX_PAIRS = 4;

export class FineTaskBuilder {
  pairs: FinePair[] = [];
  pending: Annotation | null = null;

  /** Feed a click in image coordinates; returns what the click did. */
  click(
    annotations: Annotation[],
    u: number,
    v: number,
  ): "selected" | "paired" | "ignored" {
    if (this.pending === null) {
      if (this.pairs.length >= MAX_PAIRS) return "ignored";
      const hit = snapToAnnotation(annotations, u, v, SNAP_RADIUS_PX);
      if (hit === null) return "ignored";
      this.pending = hit;
      return "selected";
    }
    this.pairs.push({
      feature_id: this.pending.id,
      u: this.pending.u,
      v: this.pending.v,
      u_star: u,
      v_star: v,
    });
    this.pending = null;
    return "paired";
  }

  get canSend(): boolean {
    return this.pairs.length >= 1;
  }

  reset(): void {
    this.pairs = [];
    this.pending = null;
  }

  message(): FineTaskMessage {
    return makeFineTask(this.pairs);
  }
}
