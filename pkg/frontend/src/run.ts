/** Compile agent definitions, upload them, and drive a workflow run. */

import { AgentDefinition, compileWorkflow } from "./compile.js";
import { EngineClient } from "./client.js";

export interface RunResult {
  steps: number;
  transcripts: { instance: number; agent: string; dialogue: number[] }[];
}

export async function run(
  defns: AgentDefinition[],
  client: EngineClient,
  opts: { rootAgent: string; runSeed?: number; promptTokens?: number[] },
): Promise<RunResult> {
  const document = compileWorkflow(defns);
  for (const defn of defns) {
    await client.registerAgent(defn.name);
  }
  await client.defineWorkflow(document);
  return client.runWorkflow(opts);
}
