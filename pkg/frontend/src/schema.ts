import { z } from "zod";

// Wire schemas for the restoration service. Every response is validated
// against these before anything is rendered or stored.

export const RestoreRequestSchema = z
  .object({
    image_b64: z.string().min(1),
    instruction: z.string().min(1).optional(),
    chain: z.array(z.string().min(1)).min(1).optional(),
    return_intent: z.boolean().optional(),
  })
  .refine((r) => (r.instruction === undefined) !== (r.chain === undefined), {
    message: "exactly one of instruction or chain",
  });

export const RestoreResponseSchema = z
  .object({
    images: z.array(z.string().min(1)),
    predicted_task: z.array(z.string()),
    confidence: z.array(z.number().min(0).max(1)),
    timing_ms: z.number().nonnegative(),
  })
  .refine(
    (r) =>
      r.images.length === r.predicted_task.length &&
      r.images.length === r.confidence.length,
    { message: "images, predicted_task and confidence must align" },
  );

export const HealthResponseSchema = z.object({
  status: z.literal("ok"),
  checkpoint_hash: z.string().min(1),
});

export const TasksResponseSchema = z.object({
  task_set: z.string().min(1),
  tasks: z.array(z.string().min(1)).min(1),
});

export type RestoreRequest = z.infer<typeof RestoreRequestSchema>;
export type RestoreResponse = z.infer<typeof RestoreResponseSchema>;
export type HealthResponse = z.infer<typeof HealthResponseSchema>;
export type TasksResponse = z.infer<typeof TasksResponseSchema>;
