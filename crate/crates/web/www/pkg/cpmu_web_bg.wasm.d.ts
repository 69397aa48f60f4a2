/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_bounds: (a: number) => [number, number];
export const demo_grid: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const demo_isUnlearned: (a: number) => number;
export const demo_metrics: (a: number, b: number, c: number) => [number, number, number, number];
export const demo_new: (a: number, b: number) => [number, number, number];
export const demo_points: (a: number) => [number, number];
export const demo_reset: (a: number) => void;
export const demo_unlearn: (a: number, b: number, c: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
