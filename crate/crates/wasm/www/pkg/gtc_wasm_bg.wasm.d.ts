/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_bundle_free: (a: number, b: number) => void;
export const bundle_bounds: (a: number) => [number, number];
export const bundle_dim: (a: number) => number;
export const bundle_lattice: (a: number, b: number, c: number) => [number, number, number, number];
export const bundle_mesh: (a: number) => [number, number, number, number];
export const bundle_new: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
export const bundle_simulate: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const bundle_vbar: (a: number, b: number, c: number) => [number, number, number];
export const triangulate: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
