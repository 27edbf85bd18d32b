/**
 * Error taxonomy shared with the compression pipeline's CLI: usage errors
 * exit 1, malformed or inconsistent data exits 2, numerical failures exit 3.
 */

export class UsageError extends Error {
  override name = "UsageError";
}

export class DataError extends Error {
  override name = "DataError";
}

export class NumericalError extends Error {
  override name = "NumericalError";
}

/** Map an error to the pipeline-wide process exit code. */
export function exitCodeFor(err: unknown): number {
  if (err instanceof UsageError) return 1;
  if (err instanceof DataError) return 2;
  if (err instanceof NumericalError) return 3;
  return 3;
}
