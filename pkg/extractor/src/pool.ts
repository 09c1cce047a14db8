/** Ordered concurrent mapping: run up to `concurrency` tasks ahead of the
 * consumer while yielding results strictly in input order. */

type Settled<R> = { ok: true; value: R } | { ok: false; error: unknown };

export async function* mapOrdered<T, R>(
  items: readonly T[],
  concurrency: number,
  fn: (item: T, index: number) => Promise<R>,
): AsyncGenerator<R, void, void> {
  if (!Number.isInteger(concurrency) || concurrency < 1) {
    throw new RangeError(`concurrency must be a positive integer, got ${concurrency}`);
  }
  // Settled envelopes so a failure mid-stream cannot leave later, already
  // started tasks as unhandled rejections.
  const pending: Promise<Settled<R>>[] = [];
  let started = 0;
  const startThrough = (bound: number) => {
    while (started < Math.min(bound, items.length)) {
      const index = started++;
      pending[index] = fn(items[index] as T, index).then(
        (value) => ({ ok: true, value }) as Settled<R>,
        (error) => ({ ok: false, error }) as Settled<R>,
      );
    }
  };
  for (let index = 0; index < items.length; index++) {
    startThrough(index + concurrency);
    const settled = await pending[index]!;
    pending[index] = undefined as never; // release the result for GC
    if (!settled.ok) {
      throw settled.error;
    }
    yield settled.value;
  }
}

export async function collectOrdered<T, R>(
  items: readonly T[],
  concurrency: number,
  fn: (item: T, index: number) => Promise<R>,
): Promise<R[]> {
  const results: R[] = [];
  for await (const result of mapOrdered(items, concurrency, fn)) {
    results.push(result);
  }
  return results;
}
