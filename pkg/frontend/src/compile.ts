/**
 * Trace-compilation of generator-style agent bodies into flow-graph
 * documents (schema_version 1).
 *
 * A body is a generator function over a context of primitives. Compiling
 * runs the body once: every yielded primitive becomes one state, and
 * value-producing primitives hand back an opaque Slot that later templates
 * reference by name. Control flow must therefore be static — loops unroll
 * at trace time and recursion or data-dependent branching is rejected.
 */

export type ReplayPolicy = "none" | "step_wise" | "hotspot";

export interface SamplingOpts {
  temperature?: number;
  top_k?: number | null;
  top_p?: number;
  max_tokens?: number;
  seed?: number;
}

export interface ToTOpts {
  branching: number;
  beam: number;
  max_depth: number;
}

export type SupervisorChoice = { kind: "linear" } | ({ kind: "tot" } & ToTOpts);

export class CompileError extends Error {}

const SLOT_BRAND = Symbol("agentserve.slot");

/** Opaque handle to a value produced at runtime; unreadable at compile time. */
export class Slot {
  readonly [SLOT_BRAND] = true;
  constructor(readonly name: string) {}

  private unreadable(): never {
    throw new CompileError(
      `slot '${this.name}' is a runtime value and cannot be read or branched on at compile time`,
    );
  }

  valueOf(): never {
    this.unreadable();
  }

  toString(): never {
    this.unreadable();
  }

  [Symbol.toPrimitive](): never {
    this.unreadable();
  }
}

export function isSlot(v: unknown): v is Slot {
  return typeof v === "object" && v !== null && SLOT_BRAND in v;
}

export type TemplateItem = number | Slot;
export type Value = number[] | Slot;

interface Primitive {
  kind: "llm" | "spawn" | "next" | "resume" | "yieldValue" | "awaitValue" | "tool";
  params: Record<string, unknown>;
  produces: boolean;
}

export interface AgentContext {
  llm(opts?: {
    template?: TemplateItem[];
    sampling?: SamplingOpts;
    replayPolicy?: ReplayPolicy;
  }): Primitive;
  spawn(agent: string): Primitive;
  next(peer: string): Primitive;
  resume(peer: string, value: Value): Primitive;
  yieldValue(value: Value): Primitive;
  awaitValue(): Primitive;
  tool(name: string): Primitive;
}

export type AgentBody = (ctx: AgentContext) => Generator<Primitive, void, Slot>;

export interface AgentDefinition {
  name: string;
  body: AgentBody;
  supervisor?: SupervisorChoice;
}

export function agent(
  name: string,
  body: AgentBody,
  supervisor: SupervisorChoice = { kind: "linear" },
): AgentDefinition {
  return { name, body, supervisor };
}

const MAX_STATES = 4096;

function templateDoc(agentName: string, template: TemplateItem[]): unknown[] {
  return template.map((item) => {
    if (typeof item === "number") {
      if (!Number.isInteger(item) || item < 0) {
        throw new CompileError(`agent '${agentName}': template tokens must be non-negative integers`);
      }
      return item;
    }
    if (isSlot(item)) return { slot: item.name };
    throw new CompileError(`agent '${agentName}': unsupported template item ${String(item)}`);
  });
}

function valueDoc(agentName: string, value: Value): Record<string, unknown> {
  if (isSlot(value)) return { value_from: value.name };
  if (Array.isArray(value)) return { value: [...value] };
  throw new CompileError(`agent '${agentName}': values must be token arrays or slots`);
}

/** Compile a single agent definition into its document entry. */
export function compileAgent(defn: AgentDefinition): Record<string, unknown> {
  const states: Record<string, unknown>[] = [];
  let slotCounter = 0;

  const ctx: AgentContext = {
    llm: (opts = {}) => ({
      kind: "llm",
      produces: true,
      params: {
        template: templateDoc(defn.name, opts.template ?? []),
        ...(opts.sampling ? { sampling: { ...opts.sampling } } : {}),
        ...(opts.replayPolicy ? { replay_policy: opts.replayPolicy } : {}),
      },
    }),
    spawn: (agentName) => ({ kind: "spawn", params: { agent: agentName }, produces: false }),
    next: (peer) => ({ kind: "next", params: { peer }, produces: true }),
    resume: (peer, value) => ({
      kind: "resume",
      params: { peer, ...valueDoc(defn.name, value) },
      produces: false,
    }),
    yieldValue: (value) => ({
      kind: "yieldValue",
      params: { ...valueDoc(defn.name, value) },
      produces: false,
    }),
    awaitValue: () => ({ kind: "awaitValue", params: {}, produces: true }),
    tool: (name) => ({ kind: "tool", params: { name }, produces: true }),
  };

  const actionNames: Record<Primitive["kind"], string> = {
    llm: "llm_call",
    spawn: "spawn",
    next: "next",
    resume: "resume",
    yieldValue: "yield_value",
    awaitValue: "await_value",
    tool: "tool_stub",
  };

  const iterator = defn.body(ctx);
  let result = iterator.next();
  while (!result.done) {
    const prim = result.value;
    if (!prim || typeof prim !== "object" || !(prim.kind in actionNames)) {
      throw new CompileError(
        `agent '${defn.name}': body yielded something that is not a primitive (state ${states.length})`,
      );
    }
    if (states.length >= MAX_STATES) {
      throw new CompileError(
        `agent '${defn.name}': body exceeded ${MAX_STATES} states — unbounded loop or recursion`,
      );
    }
    const stateName = `s${states.length}`;
    const params: Record<string, unknown> = { ...prim.params };
    let produced: Slot | undefined;
    if (prim.produces) {
      produced = new Slot(`v${slotCounter++}`);
      if (prim.kind !== "spawn") params.store = produced.name;
    }
    states.push({ name: stateName, action: actionNames[prim.kind], params });
    result = iterator.next(produced as Slot);
  }

  // chain: start -> s0 -> ... -> end
  const doc: Record<string, unknown>[] = [
    { name: "start", action: "tool_stub", params: { name: "start" }, next: states.length ? "s0" : "end" },
  ];
  states.forEach((state, i) => {
    doc.push({ ...state, next: i + 1 < states.length ? `s${i + 1}` : "end" });
  });
  doc.push({ name: "end", action: "terminal", params: {} });

  return {
    name: defn.name,
    initial: "start",
    supervisor: normalizeSupervisor(defn.supervisor ?? { kind: "linear" }),
    states: doc,
  };
}

function normalizeSupervisor(choice: SupervisorChoice): Record<string, unknown> {
  if (choice.kind === "linear") return { kind: "linear" };
  return {
    kind: "tot",
    branching: choice.branching,
    beam: choice.beam,
    max_depth: choice.max_depth,
  };
}

/** Compile a set of agents into one workflow document. */
export function compileWorkflow(defns: AgentDefinition[]): Record<string, unknown> {
  const names = new Set<string>();
  for (const d of defns) {
    if (names.has(d.name)) throw new CompileError(`duplicate agent name '${d.name}'`);
    names.add(d.name);
  }
  return {
    schema_version: 1,
    agents: defns.map(compileAgent),
  };
}

/** Canonical serialization: sorted keys, no whitespace — byte-stable. */
export function canonicalJson(value: unknown): string {
  if (value === null || typeof value !== "object") return JSON.stringify(value);
  if (Array.isArray(value)) return `[${value.map(canonicalJson).join(",")}]`;
  const entries = Object.entries(value as Record<string, unknown>)
    .sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0))
    .map(([k, v]) => `${JSON.stringify(k)}:${canonicalJson(v)}`);
  return `{${entries.join(",")}}`;
}
