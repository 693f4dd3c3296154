/* tslint:disable */
/* eslint-disable */

export class Simulation {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Advances `k` steps.
     */
    advance(k: number): void;
    energy(): number;
    /**
     * Row-major |ψ| on the bottom layer; −1 marks cells outside the domain.
     */
    modulus_slice(): Float32Array;
    /**
     * Thin slab (`n × n × 2`), random ψ₀, field `h` along z.
     */
    constructor(shape: string, n: number, kappa: number, h: number, dt: number, seed: bigint);
    time(): number;
    width(): number;
}

/**
 * Smallest `count` eigenvalues of M on an `n³` domain.
 */
export function m_spectrum(shape: string, n: number, count: number): Float64Array;

/**
 * norm_ratio of the corner-singular gradient field on slabs with
 * `base`, `2·base`, ... cells across.
 */
export function ratio_refinement(base: number, levels: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_simulation_free: (a: number, b: number) => void;
    readonly m_spectrum: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly ratio_refinement: (a: number, b: number) => [number, number, number, number];
    readonly simulation_advance: (a: number, b: number) => [number, number];
    readonly simulation_energy: (a: number) => number;
    readonly simulation_modulus_slice: (a: number) => [number, number];
    readonly simulation_new: (a: number, b: number, c: number, d: number, e: number, f: number, g: bigint) => [number, number, number];
    readonly simulation_time: (a: number) => number;
    readonly simulation_width: (a: number) => number;
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
