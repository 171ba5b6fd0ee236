/* tslint:disable */
/* eslint-disable */

/**
 * A generated corpus, tagged and embedded with the stub provider.
 */
export class Corpus {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Takes `[{a, b, label}]` with label `Similar` or `NotSimilar`, returns
     * `{tau, stats}`.
     */
    calibrate(labels: string): string;
    /**
     * `[{id, cluster, launder, tags}]`
     */
    customers(): string;
    /**
     * `{query, neighbors: [{rank, id, score, same_cluster, label}], precision}`
     */
    neighbors(id: string, k: number): string;
    constructor(seed: number, n: number, clusters: number, dim: number);
    setThreshold(tau: number): void;
}

export function textSimilarity(a: string, b: string, dim: number): number;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_corpus_free: (a: number, b: number) => void;
    readonly corpus_calibrate: (a: number, b: number, c: number) => [number, number, number, number];
    readonly corpus_customers: (a: number) => [number, number];
    readonly corpus_neighbors: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly corpus_new: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly corpus_setThreshold: (a: number, b: number) => [number, number];
    readonly textSimilarity: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
