/* tslint:disable */
/* eslint-disable */

/**
 * A loaded bundle (config, certificate and policy).
 */
export class Bundle {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Box bounds as lo,hi pairs.
     */
    bounds(): Float64Array;
    dim(): number;
    /**
     * V̄ on an nx×ny lattice over a 2-D box, row-major with x1 varying fastest.
     */
    lattice(nx: number, ny: number): Float64Array;
    /**
     * Mesh of the bundle's triangulation as JSON.
     */
    mesh(): string;
    constructor(config_toml: string, certificate_json: string, policy_json: string);
    /**
     * Closed-loop trajectory from `x0` as JSON, with the time bound at x0.
     */
    simulate(x0: Float64Array, horizon: number, vertex: number): string;
    vbar(x: Float64Array): number;
}

/**
 * Mesh of a regular grid as JSON: `ranges` holds lo,hi pairs, `counts` the
 * points per axis.
 */
export function triangulate(ranges: Float64Array, counts: Uint32Array): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_bundle_free: (a: number, b: number) => void;
    readonly bundle_bounds: (a: number) => [number, number];
    readonly bundle_dim: (a: number) => number;
    readonly bundle_lattice: (a: number, b: number, c: number) => [number, number, number, number];
    readonly bundle_mesh: (a: number) => [number, number, number, number];
    readonly bundle_new: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
    readonly bundle_simulate: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly bundle_vbar: (a: number, b: number, c: number) => [number, number, number];
    readonly triangulate: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
