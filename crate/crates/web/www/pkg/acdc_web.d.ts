/* tslint:disable */
/* eslint-disable */

/**
 * Singular values of a random Gaussian matrix before and after perturbing
 * the leading `k` of them with N(0, sigma) noise.
 */
export function mutation_spectrum(rows: number, cols: number, k: number, sigma: number, seed: number): string;

/**
 * Runs the synthetic coevolution loop and compares the selected task force
 * with the seed models on 200 held-out probes.
 */
export function run_coevolution(generations: number, seed: number): string;

/**
 * Coverage reached by each selection strategy for task forces of size
 * 1..=models on a random response matrix whose models differ in skill.
 */
export function strategy_curves(models: number, questions: number, seed: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly mutation_spectrum: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly run_coevolution: (a: number, b: number) => [number, number, number, number];
    readonly strategy_curves: (a: number, b: number, c: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
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
