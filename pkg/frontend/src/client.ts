/**
 * NDJSON protocol client over a child process (stdio) or a TCP socket.
 *
 * The engine answers messages in order per connection, so responses are
 * matched FIFO against in-flight requests; `generate` responses additionally
 * echo `request_id`, which is verified when present.
 */

import { spawn, type ChildProcess } from "node:child_process";
import { createConnection, type Socket } from "node:net";

export class ProtocolError extends Error {}
export class TransportError extends Error {}

export interface Transport {
  send(line: string): void;
  onLine(handler: (line: string) => void): void;
  onClose(handler: (reason: string) => void): void;
  close(): Promise<void>;
}

function lineSplitter(emit: (line: string) => void): (chunk: Buffer | string) => void {
  let buffer = "";
  return (chunk) => {
    buffer += chunk.toString();
    const lines = buffer.split("\n");
    buffer = lines.pop() ?? "";
    for (const line of lines) {
      const trimmed = line.trim();
      if (trimmed) emit(trimmed);
    }
  };
}

export class StdioTransport implements Transport {
  private proc: ChildProcess;
  private lineHandler: (line: string) => void = () => {};
  private closeHandler: (reason: string) => void = () => {};

  constructor(command: string, args: string[], options: { cwd?: string } = {}) {
    this.proc = spawn(command, args, { stdio: ["pipe", "pipe", "pipe"], cwd: options.cwd });
    const splitter = lineSplitter((line) => this.lineHandler(line));
    this.proc.stdout?.on("data", splitter);
    this.proc.on("exit", (code) => this.closeHandler(`process exited with code ${code}`));
    this.proc.on("error", (err) => this.closeHandler(`process error: ${err.message}`));
  }

  send(line: string): void {
    if (!this.proc.stdin?.writable) throw new TransportError("stdin is not writable");
    this.proc.stdin.write(line + "\n");
  }

  onLine(handler: (line: string) => void): void {
    this.lineHandler = handler;
  }

  onClose(handler: (reason: string) => void): void {
    this.closeHandler = handler;
  }

  async close(): Promise<void> {
    this.proc.stdin?.end();
    await new Promise<void>((resolve) => {
      const timer = setTimeout(() => {
        this.proc.kill();
        resolve();
      }, 2000);
      this.proc.once("exit", () => {
        clearTimeout(timer);
        resolve();
      });
    });
  }
}

export class TcpTransport implements Transport {
  private socket: Socket;
  private lineHandler: (line: string) => void = () => {};
  private closeHandler: (reason: string) => void = () => {};
  readonly connected: Promise<void>;

  constructor(host: string, port: number, timeoutMs = 5000) {
    this.socket = createConnection({ host, port });
    this.connected = new Promise((resolve, reject) => {
      const timer = setTimeout(
        () => reject(new TransportError(`connect timeout after ${timeoutMs}ms`)),
        timeoutMs,
      );
      this.socket.once("connect", () => {
        clearTimeout(timer);
        resolve();
      });
      this.socket.once("error", (err) => {
        clearTimeout(timer);
        reject(new TransportError(`connection failed: ${err.message}`));
      });
    });
    this.socket.on("data", lineSplitter((line) => this.lineHandler(line)));
    this.socket.on("close", () => this.closeHandler("socket closed"));
  }

  send(line: string): void {
    this.socket.write(line + "\n");
  }

  onLine(handler: (line: string) => void): void {
    this.lineHandler = handler;
  }

  onClose(handler: (reason: string) => void): void {
    this.closeHandler = handler;
  }

  async close(): Promise<void> {
    await new Promise<void>((resolve) => this.socket.end(resolve));
  }
}

interface Pending {
  requestId?: string;
  resolve: (msg: Record<string, unknown>) => void;
  reject: (err: Error) => void;
}

export class EngineClient {
  private pending: Pending[] = [];
  private requestCounter = 0;

  constructor(private transport: Transport, private timeoutMs = 30_000) {
    transport.onLine((line) => this.handleLine(line));
    transport.onClose((reason) => {
      for (const p of this.pending.splice(0)) {
        p.reject(new TransportError(`connection lost: ${reason}`));
      }
    });
  }

  private handleLine(line: string): void {
    let msg: Record<string, unknown>;
    try {
      msg = JSON.parse(line);
    } catch {
      return; // not a protocol line (e.g. stray logging)
    }
    const next = this.pending.shift();
    if (!next) return;
    if (next.requestId !== undefined && msg.request_id !== undefined && msg.request_id !== next.requestId) {
      next.reject(new ProtocolError(`response request_id ${msg.request_id} does not match ${next.requestId}`));
      return;
    }
    next.resolve(msg);
  }

  request(message: Record<string, unknown>): Promise<Record<string, unknown>> {
    return new Promise((resolve, reject) => {
      const entry: Pending = { requestId: message.request_id as string | undefined, resolve, reject };
      const timer = setTimeout(() => {
        const idx = this.pending.indexOf(entry);
        if (idx >= 0) this.pending.splice(idx, 1);
        reject(new TransportError(`timed out after ${this.timeoutMs}ms waiting for a response`));
      }, this.timeoutMs);
      entry.resolve = (msg) => {
        clearTimeout(timer);
        resolve(msg);
      };
      entry.reject = (err) => {
        clearTimeout(timer);
        reject(err);
      };
      this.pending.push(entry);
      this.transport.send(JSON.stringify(message));
    });
  }

  private expectOk(msg: Record<string, unknown>): Record<string, unknown> {
    if (!msg.ok) {
      const error = msg.error as { code?: string; message?: string } | undefined;
      throw new ProtocolError(`engine error [${error?.code ?? "unknown"}]: ${error?.message ?? "?"}`);
    }
    return msg;
  }

  async registerAgent(agentId: string): Promise<void> {
    this.expectOk(await this.request({ type: "register_agent", agent_id: agentId }));
  }

  async defineWorkflow(document: Record<string, unknown>): Promise<string[]> {
    const res = this.expectOk(await this.request({ type: "define_workflow", document }));
    return res.agents as string[];
  }

  async generate(opts: {
    agentId: string;
    promptTokens: number[];
    sampling?: Record<string, unknown>;
    replayPolicy?: string;
  }): Promise<Record<string, unknown>> {
    const requestId = `sdk-${this.requestCounter++}`;
    return this.expectOk(
      await this.request({
        type: "generate",
        request_id: requestId,
        agent_id: opts.agentId,
        prompt_tokens: opts.promptTokens,
        ...(opts.sampling ? { sampling: opts.sampling } : {}),
        ...(opts.replayPolicy ? { replay_policy: opts.replayPolicy } : {}),
      }),
    );
  }

  async runWorkflow(opts: {
    rootAgent: string;
    runSeed?: number;
    promptTokens?: number[];
  }): Promise<{ steps: number; transcripts: { instance: number; agent: string; dialogue: number[] }[] }> {
    const res = this.expectOk(
      await this.request({
        type: "run_workflow",
        root_agent: opts.rootAgent,
        run_seed: opts.runSeed ?? 0,
        ...(opts.promptTokens ? { prompt_tokens: opts.promptTokens } : {}),
      }),
    );
    return {
      steps: res.steps as number,
      transcripts: res.transcripts as { instance: number; agent: string; dialogue: number[] }[],
    };
  }

  async metrics(): Promise<Record<string, unknown>> {
    return this.expectOk(await this.request({ type: "metrics" }));
  }

  async close(): Promise<void> {
    await this.transport.close();
  }
}
