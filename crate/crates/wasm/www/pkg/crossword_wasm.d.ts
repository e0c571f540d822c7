/* tslint:disable */
/* eslint-disable */

/**
 * Estimated Accept completion per candidate config over a range of
 * payload sizes, with the slowest `lagged` followers slowed by
 * `lag_factor`.
 */
export function chooser_curve(n: number, delay_ms: number, mbps: number, lagged: number, lag_factor: number): string;

/**
 * Shards held by each server under balanced round-robin with `c` shards
 * per server, and what the replies from `replies` cover.
 */
export function codeword_view(n: number, c: number, replies: Uint32Array): string;

/**
 * The `(q, c)` grid for an `n`-server cluster.
 */
export function explore_region(n: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly chooser_curve: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly codeword_view: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly explore_region: (a: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
