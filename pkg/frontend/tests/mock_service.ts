// In-memory stand-in for the session service, speaking the same wire schema.
// Deformation completes after a couple of polls and translates every vertex
// so that the handle lands exactly on the target at step K.

import type { FetchLike } from "../src/api.js";
import { rleToMask } from "../src/rle.js";
import type { DeformStatus, DragSpecJson } from "../src/types.js";

interface MockSession {
  id: string;
  meshed: boolean;
  spec: DragSpecJson | null;
  k: number;
  steps: number;
  pollsLeft: number;
  vertices: number[][];
  faces: number[][];
}

function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

export class MockService {
  sessions = new Map<string, MockSession>();
  next = 1;
  gridSize = 16;
  requests: string[] = [];

  fetch: FetchLike = async (url, init) => {
    const method = init?.method ?? "GET";
    const path = url.replace(/^https?:\/\/[^/]+/, "");
    this.requests.push(`${method} ${path}`);
    return this.route(method, path, init);
  };

  private grid(): { vertices: number[][]; faces: number[][] } {
    const n = this.gridSize;
    const vertices: number[][] = [];
    for (let y = 0; y < n; y++) {
      for (let x = 0; x < n; x++) {
        vertices.push([x, y, 0.5]);
      }
    }
    const faces: number[][] = [];
    for (let y = 0; y < n - 1; y++) {
      for (let x = 0; x < n - 1; x++) {
        const a = y * n + x;
        faces.push([a, a + 1, a + n + 1]);
        faces.push([a, a + n + 1, a + n]);
      }
    }
    return { vertices, faces };
  }

  private stepVertices(session: MockSession, k: number): number[][] {
    const spec = session.spec!;
    const [hx, hy] = spec.drags[0].handle;
    const [tx, ty] = spec.drags[0].target;
    const f = k / session.steps;
    const dx = (tx - hx) * f;
    const dy = (ty - hy) * f;
    return session.vertices.map(([x, y, z]) => [x + dx, y + dy, z]);
  }

  private route(method: string, path: string, init?: RequestInit): Response {
    if (method === "POST" && path === "/sessions") {
      const id = `mock${this.next++}`;
      const { vertices, faces } = this.grid();
      this.sessions.set(id, {
        id, meshed: false, spec: null, k: 0, steps: 0, pollsLeft: 0,
        vertices, faces,
      });
      return jsonResponse(201, { id });
    }
    const match = path.match(/^\/sessions\/([^/]+)(\/.*)?$/);
    if (!match) return jsonResponse(404, { detail: "unknown route" });
    const session = this.sessions.get(match[1]);
    if (!session) return jsonResponse(404, { detail: `unknown resource: '${match[1]}'` });
    const rest = (match[2] ?? "").split("?")[0];

    if (method === "PUT" && rest === "/depth") {
      return new Response(null, { status: 204 });
    }
    if (method === "POST" && rest === "/mesh") {
      session.meshed = true;
      return jsonResponse(200, {
        vertices: session.vertices.length,
        faces: session.faces.length,
      });
    }
    if (method === "GET" && rest === "/mesh") {
      return jsonResponse(200, {
        vertices: session.vertices,
        faces: session.faces,
        projection: session.vertices.map(([x, y]) => [x, y]),
        image_size: [this.gridSize, this.gridSize],
      });
    }
    if (method === "PUT" && rest === "/drag-spec") {
      const body = JSON.parse(String(init?.body)) as DragSpecJson;
      if (!body.drags?.length) return jsonResponse(422, { detail: "drag spec needs drags" });
      const { mask } = rleToMask(body.mask);
      if (!mask.some((v) => v)) return jsonResponse(422, { detail: "editable mask is empty" });
      session.spec = body;
      return new Response(null, { status: 204 });
    }
    if (method === "GET" && rest === "/drag-spec") {
      if (!session.spec) return jsonResponse(404, { detail: "unknown resource: 'drag-spec'" });
      return jsonResponse(200, session.spec);
    }
    if (method === "POST" && rest === "/deform") {
      const body = JSON.parse(String(init?.body));
      if (!(body.lambda > 0 && body.lambda <= 1)) {
        return jsonResponse(422, { detail: "lambda must be in (0, 1]" });
      }
      if (!session.meshed || !session.spec) {
        return jsonResponse(422, { detail: "mesh and drag spec must exist before deforming" });
      }
      session.steps = body.steps;
      session.k = 0;
      session.pollsLeft = 2;
      return jsonResponse(202, { job: "job1" });
    }
    if (method === "GET" && rest === "/deform/status") {
      const done = session.pollsLeft <= 0;
      if (!done) {
        session.pollsLeft--;
        session.k = Math.min(session.k + 1, session.steps);
      } else {
        session.k = session.steps;
      }
      const status: DeformStatus = {
        status: done ? "done" : "deforming",
        step_k: session.k,
        K: session.steps,
        energy: 0.25,
        error: null,
      };
      return jsonResponse(200, status);
    }
    const stepMatch = rest.match(/^\/deform\/steps\/(\d+)$/);
    if (method === "GET" && stepMatch) {
      const k = Number(stepMatch[1]);
      if (!session.spec || k > session.steps) {
        return jsonResponse(404, { detail: `unknown resource: 'step ${k}'` });
      }
      return jsonResponse(200, { vertices: this.stepVertices(session, k), energy: 0.1 * k });
    }
    if (method === "GET" && rest === "/flow") {
      const query = new URLSearchParams((match[2] ?? "").split("?")[1] ?? "");
      const strategy = query.get("strategy") ?? "magnitude";
      const count = Number(query.get("count") ?? 10);
      const gridN = Number(query.get("grid") ?? 20);
      const [hx, hy] = session.spec!.drags[0].handle;
      const [tx, ty] = session.spec!.drags[0].target;
      // magnitude: vectors sorted by shrinking length; uniform: equal stride
      const vectors = [];
      for (let i = 0; i < Math.min(count, 12); i++) {
        const scale = strategy === "magnitude" ? 1 - i / 12 : 1;
        vectors.push({ x: hx + i, y: hy, dx: (tx - hx) * scale, dy: (ty - hy) * scale });
      }
      return jsonResponse(200, { grid_n: gridN, strategy, vectors });
    }
    if (method === "GET" && rest === "/metrics") {
      return jsonResponse(200, { melr: 1.0, m_arap_error: 0.0, faces: session.faces.length, movable_edges: 5 });
    }
    return jsonResponse(404, { detail: `unknown route ${method} ${rest}` });
  }
}
