/**
 * Cross-path equivalence: agents compiled by this SDK and run through the
 * serve protocol must produce transcripts identical to the engine running
 * the same document natively with the same seed.
 */

import { execFile, spawn } from "node:child_process";
import { mkdtempSync, writeFileSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { promisify } from "node:util";
import { afterAll, describe, expect, it } from "vitest";

import {
  agent,
  compileWorkflow,
  EngineClient,
  StdioTransport,
  TcpTransport,
  type AgentDefinition,
} from "../src/index.js";

const execFileAsync = promisify(execFile);
const PYTHON = process.env.AGENTSERVE_PYTHON ?? "python3";
const SAMPLING = { temperature: 0.7, max_tokens: 12 };

function repairPair(): AgentDefinition[] {
  const bugRepair = agent("bug_repair", function* (ctx) {
    yield ctx.spawn("context_gather");
    for (let i = 0; i < 2; i++) {
      const code = yield ctx.next("context_gather");
      const patch = yield ctx.llm({ template: [code], sampling: SAMPLING });
      yield ctx.resume("context_gather", patch);
    }
    yield ctx.tool("verify");
  });
  const contextGather = agent("context_gather", function* (ctx) {
    for (let i = 0; i < 2; i++) {
      const code = yield ctx.tool("gather_code");
      yield ctx.yieldValue(code);
      yield ctx.awaitValue();
    }
  });
  return [bugRepair, contextGather];
}

async function nativeRun(
  document: Record<string, unknown>,
  root: string,
  seed: number,
): Promise<Record<string, unknown>> {
  const dir = mkdtempSync(join(tmpdir(), "agentserve-sdk-"));
  const docPath = join(dir, "workflow.json");
  writeFileSync(docPath, JSON.stringify(document));
  try {
    const { stdout } = await execFileAsync(PYTHON, [
      "-m",
      "agentserve.run_document",
      "--document",
      docPath,
      "--root",
      root,
      "--seed",
      String(seed),
    ]);
    return JSON.parse(stdout);
  } finally {
    rmSync(dir, { recursive: true, force: true });
  }
}

describe("SDK <-> engine equivalence", () => {
  const clients: EngineClient[] = [];

  afterAll(async () => {
    await Promise.all(clients.map((c) => c.close().catch(() => undefined)));
  });

  it("repair-pair transcript over the protocol equals the native run", async () => {
    const defns = repairPair();
    const document = compileWorkflow(defns);
    const seed = 5;

    const native = await nativeRun(document, "bug_repair", seed);

    const client = new EngineClient(
      new StdioTransport(PYTHON, ["-m", "agentserve", "serve", "--stdio"]),
    );
    clients.push(client);
    const viaProtocol = await (await import("../src/index.js")).run(defns, client, {
      rootAgent: "bug_repair",
      runSeed: seed,
    });

    expect(viaProtocol.transcripts).toEqual(native.transcripts);
    expect(viaProtocol.steps).toEqual(native.steps);
  }, 60_000);

  it("two sequential runs with the same seed produce identical transcripts", async () => {
    const defns = repairPair();
    const results = [];
    for (let i = 0; i < 2; i++) {
      const client = new EngineClient(
        new StdioTransport(PYTHON, ["-m", "agentserve", "serve", "--stdio"]),
      );
      clients.push(client);
      const { run } = await import("../src/index.js");
      results.push(await run(defns, client, { rootAgent: "bug_repair", runSeed: 9 }));
    }
    expect(results[0].transcripts).toEqual(results[1].transcripts);
  }, 60_000);

  it("generate responses are deterministic and echo the request id", async () => {
    const client = new EngineClient(
      new StdioTransport(PYTHON, ["-m", "agentserve", "serve", "--stdio"]),
    );
    clients.push(client);
    await client.registerAgent("probe");
    const args = {
      agentId: "probe",
      promptTokens: [1, 2, 3],
      sampling: { temperature: 0.6, max_tokens: 8, seed: 77 },
    };
    const first = await client.generate(args);
    const second = await client.generate(args);
    expect(first.tokens).toEqual(second.tokens);
    expect((first.tokens as number[]).length).toBe(8);
  }, 60_000);

  it("protocol errors surface as exceptions with the server message", async () => {
    const client = new EngineClient(
      new StdioTransport(PYTHON, ["-m", "agentserve", "serve", "--stdio"]),
    );
    clients.push(client);
    await expect(
      client.generate({ agentId: "ghost", promptTokens: [1] }),
    ).rejects.toThrow(/unknown agent/);
  }, 60_000);

  it("connects over TCP and round-trips a workflow", async () => {
    const proc = spawn(PYTHON, ["-m", "agentserve", "serve", "--listen", "127.0.0.1:0"]);
    try {
      const port = await new Promise<number>((resolve, reject) => {
        const timer = setTimeout(() => reject(new Error("server did not report a port")), 15_000);
        proc.stderr.on("data", (chunk: Buffer) => {
          const match = chunk.toString().match(/listening on [^:]+:(\d+)/);
          if (match) {
            clearTimeout(timer);
            resolve(Number(match[1]));
          }
        });
      });
      const transport = new TcpTransport("127.0.0.1", port);
      await transport.connected;
      const client = new EngineClient(transport);
      const defns = repairPair();
      const { run } = await import("../src/index.js");
      const viaTcp = await run(defns, client, { rootAgent: "bug_repair", runSeed: 5 });
      const native = await nativeRun(compileWorkflow(defns), "bug_repair", 5);
      expect(viaTcp.transcripts).toEqual(native.transcripts);
      await client.close();
    } finally {
      proc.kill();
    }
  }, 60_000);

  it("engine down surfaces a transport error within the timeout", async () => {
    const transport = new TcpTransport("127.0.0.1", 1, 500); // port 1: nothing listens
    await expect(transport.connected).rejects.toThrow(/connection failed|connect timeout/);
  }, 10_000);
});
