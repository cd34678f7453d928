import { describe, expect, it } from "vitest";

import { ServiceClient } from "../src/client";
import {
  HealthResponseSchema,
  RestoreRequestSchema,
  RestoreResponseSchema,
  TasksResponseSchema,
} from "../src/schema";

describe("wire schemas", () => {
  it("accepts a valid restore request with exactly one prompt source", () => {
    expect(() =>
      RestoreRequestSchema.parse({ image_b64: "abc", instruction: "fix it" }),
    ).not.toThrow();
    expect(() =>
      RestoreRequestSchema.parse({ image_b64: "abc", chain: ["a", "b"] }),
    ).not.toThrow();
    expect(() =>
      RestoreRequestSchema.parse({
        image_b64: "abc",
        instruction: "a",
        chain: ["b"],
      }),
    ).toThrow();
    expect(() => RestoreRequestSchema.parse({ image_b64: "abc" })).toThrow();
  });

  it("requires aligned arrays in restore responses", () => {
    const good = {
      images: ["aW1n"],
      predicted_task: ["denoising"],
      confidence: [0.75],
      timing_ms: 12.5,
    };
    expect(() => RestoreResponseSchema.parse(good)).not.toThrow();
    expect(() =>
      RestoreResponseSchema.parse({ ...good, predicted_task: [] }),
    ).toThrow();
    expect(() =>
      RestoreResponseSchema.parse({ ...good, confidence: [1.5] }),
    ).toThrow();
  });

  it("validates health and tasks payloads", () => {
    expect(() =>
      HealthResponseSchema.parse({ status: "ok", checkpoint_hash: "ff00" }),
    ).not.toThrow();
    expect(() =>
      HealthResponseSchema.parse({ status: "down", checkpoint_hash: "ff00" }),
    ).toThrow();
    expect(() =>
      TasksResponseSchema.parse({ task_set: "5D", tasks: ["denoising"] }),
    ).not.toThrow();
    expect(() => TasksResponseSchema.parse({ task_set: "5D", tasks: [] })).toThrow();
  });
});

describe("client validation", () => {
  const fakeFetch = (payload: unknown, status = 200): typeof fetch =>
    (async () =>
      new Response(JSON.stringify(payload), {
        status,
        headers: { "Content-Type": "application/json" },
      })) as typeof fetch;

  it("rejects schema-violating service responses", async () => {
    const client = new ServiceClient(
      "http://x",
      fakeFetch({ images: ["a"], predicted_task: [], confidence: [], timing_ms: 1 }),
    );
    await expect(client.restore("aW1n", "fix")).rejects.toThrow();
  });

  it("surfaces service error details with status", async () => {
    const client = new ServiceClient(
      "http://x",
      fakeFetch({ detail: "instruction must be non-empty" }, 422),
    );
    await expect(client.restore("aW1n", "fix")).rejects.toMatchObject({
      status: 422,
    });
  });

  it("parses valid responses", async () => {
    const client = new ServiceClient(
      "http://x",
      fakeFetch({
        images: ["aW1n"],
        predicted_task: ["deraining"],
        confidence: [0.5],
        timing_ms: 3,
      }),
    );
    const res = await client.restore("aW1n", "clear the rain");
    expect(res.predicted_task[0]).toBe("deraining");
  });
});
