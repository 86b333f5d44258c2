/** Thin wrapper around the beamforge executable.
 *
 * The binary is resolved from the BEAMFORGE_BIN environment variable (a
 * space-separated argv prefix, e.g. "python3 -m beamforge.cli") and falls
 * back to `beamforge` on PATH. Every invocation runs with --deterministic
 * so stdout is reproducible and parseable.
 */

import { spawnSync } from "child_process";

export class CliError extends Error {
  constructor(
    message: string,
    public readonly exitCode: number | null,
    public readonly stderr: string
  ) {
    super(message);
    this.name = "CliError";
  }
}

export function cliArgv(): string[] {
  const env = process.env.BEAMFORGE_BIN;
  return env && env.trim() ? env.trim().split(/\s+/) : ["beamforge"];
}

export function runCli(args: string[]): string {
  const [cmd, ...prefix] = cliArgv();
  const result = spawnSync(cmd, [...prefix, "--deterministic", ...args], {
    encoding: "utf-8",
    maxBuffer: 256 * 1024 * 1024,
  });
  if (result.error) {
    throw new CliError(`failed to launch ${cmd}: ${result.error.message}`, null, "");
  }
  if (result.status !== 0) {
    throw new CliError(
      `${cmd} ${args[0]} exited with ${result.status}: ${result.stderr.trim()}`,
      result.status,
      result.stderr
    );
  }
  return result.stdout;
}

/** Parse the CLI's line-oriented key=value output. */
export function parseKv(stdout: string): Map<string, string> {
  const kv = new Map<string, string>();
  for (const line of stdout.split("\n")) {
    const idx = line.indexOf("=");
    if (idx > 0) kv.set(line.slice(0, idx), line.slice(idx + 1));
  }
  return kv;
}
