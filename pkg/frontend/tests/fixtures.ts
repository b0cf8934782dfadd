/**
 * Recorded-exchange replay. Each fixture file is one real request/response
 * pair captured from the running service by scripts/record_fixtures.py.
 * FakeFetch serves them in order and fails the test if the client deviates
 * from the recorded method, path, or payload, which is the contract: every
 * byte the UI writes must be one of the documented endpoint payloads.
 */

import { deepStrictEqual } from "node:assert/strict";
import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import type { FetchLike } from "../src/api.js";

export interface Recorded {
  method: string;
  path: string;
  request: unknown;
  status: number;
  body?: unknown;
  content_type?: string;
  body_magic_hex?: string;
}

const HERE = dirname(fileURLToPath(import.meta.url));

export function fixture(name: string): Recorded {
  const raw = readFileSync(join(HERE, "fixtures", `${name}.json`), "utf8");
  return JSON.parse(raw) as Recorded;
}

export function body<T>(name: string): T {
  return fixture(name).body as T;
}

export class FakeFetch {
  private readonly queue: Recorded[] = [];
  readonly served: string[] = [];

  expect(...names: string[]): this {
    for (const name of names) this.queue.push(fixture(name));
    return this;
  }

  get impl(): FetchLike {
    return async (url, init) => {
      const recorded = this.queue.shift();
      if (!recorded) throw new Error(`unexpected request ${init?.method ?? "GET"} ${url}`);
      const method = init?.method ?? "GET";
      deepStrictEqual({ method, path: url }, { method: recorded.method, path: recorded.path });
      if (recorded.request !== null) {
        deepStrictEqual(JSON.parse(String(init?.body)), recorded.request);
      }
      this.served.push(`${method} ${recorded.path}`);
      return new Response(JSON.stringify(recorded.body ?? null), {
        status: recorded.status,
        headers: { "content-type": "application/json" },
      });
    };
  }

  get drained(): boolean {
    return this.queue.length === 0;
  }
}
