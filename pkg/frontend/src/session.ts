import { RestoreBackend } from "./client.js";

export interface RestoreStep {
  instruction: string;
  /** base64 PNG exactly as the service returned it; never re-encoded */
  imageB64: string;
  predictedTask: string;
  confidence: number;
  /** index of the step whose output was the input, -1 for the original image */
  parent: number;
}

export interface SessionState {
  originalImageB64: string;
  steps: RestoreStep[];
  /** which step further instructions branch from; -1 selects the original */
  selectedStep: number;
  pending: boolean;
}

export function newSession(originalImageB64: string): SessionState {
  if (!originalImageB64) throw new Error("session needs an image");
  return { originalImageB64, steps: [], selectedStep: -1, pending: false };
}

/** Image that the next instruction will be applied to. */
export function inputImage(state: SessionState): string {
  if (state.selectedStep === -1) return state.originalImageB64;
  const step = state.steps[state.selectedStep];
  if (!step) throw new Error(`invalid selected step ${state.selectedStep}`);
  return step.imageB64;
}

export function selectStep(state: SessionState, index: number): SessionState {
  if (index < -1 || index >= state.steps.length) {
    throw new Error(`step ${index} out of range`);
  }
  return { ...state, selectedStep: index };
}

/** Before/after images for the compare view of one step. */
export function compareInputs(
  state: SessionState,
  index: number,
): { before: string; after: string; step: RestoreStep } {
  const step = state.steps[index];
  if (!step) throw new Error(`step ${index} out of range`);
  const before =
    step.parent === -1
      ? state.originalImageB64
      : (state.steps[step.parent] as RestoreStep).imageB64;
  return { before, after: step.imageB64, step };
}

/**
 * Send one instruction against the currently selected step's image and append
 * the result. The step list is append-only; history is never rewritten.
 */
export async function uploadAndInstruct(
  state: SessionState,
  client: RestoreBackend,
  instruction: string,
): Promise<SessionState> {
  if (!instruction.trim()) throw new Error("instruction must not be empty");
  if (state.pending) throw new Error("a restore is already in flight");
  const input = inputImage(state);
  const response = await client.restore(input, instruction);
  const step: RestoreStep = {
    instruction,
    imageB64: response.images[0] as string,
    predictedTask: response.predicted_task[0] ?? "",
    confidence: response.confidence[0] ?? 0,
    parent: state.selectedStep,
  };
  const steps = [...state.steps, step];
  return { ...state, steps, selectedStep: steps.length - 1, pending: false };
}

/** Instruction list along the ancestry of one step (oldest first). */
export function instructionTrail(state: SessionState, index: number): string[] {
  const trail: string[] = [];
  let cursor = index;
  while (cursor !== -1) {
    const step = state.steps[cursor];
    if (!step) throw new Error(`step ${cursor} out of range`);
    trail.push(step.instruction);
    cursor = step.parent;
  }
  return trail.reverse();
}

/**
 * Re-run a step's instruction trail from the original image against the
 * service; with the same checkpoint this reproduces the step's image exactly.
 */
export async function replayTrail(
  state: SessionState,
  client: RestoreBackend,
  index: number,
): Promise<string[]> {
  const images: string[] = [];
  let current = state.originalImageB64;
  for (const instruction of instructionTrail(state, index)) {
    const response = await client.restore(current, instruction);
    current = response.images[0] as string;
    images.push(current);
  }
  return images;
}
