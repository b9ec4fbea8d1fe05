export {
  agent,
  compileAgent,
  compileWorkflow,
  canonicalJson,
  CompileError,
  Slot,
  isSlot,
} from "./compile.js";
export type {
  AgentBody,
  AgentContext,
  AgentDefinition,
  ReplayPolicy,
  SamplingOpts,
  SupervisorChoice,
  TemplateItem,
  ToTOpts,
  Value,
} from "./compile.js";
export {
  EngineClient,
  StdioTransport,
  TcpTransport,
  ProtocolError,
  TransportError,
} from "./client.js";
export type { Transport } from "./client.js";
export { run } from "./run.js";
export type { RunResult } from "./run.js";
