/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * `[x_min, x_max, y_min, y_max]` of the plotted region.
     */
    bounds(): Float64Array;
    grid(alpha: number, width: number, height: number): Uint8Array;
    isUnlearned(): boolean;
    metrics(alpha: number, c: number): string;
    constructor(seed: number, forget: number);
    /**
     * Test points as `x, y, label, forget` quadruples.
     */
    points(): Float64Array;
    reset(): void;
    unlearn(learning_rate: number, epochs: number): string;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_bounds: (a: number) => [number, number];
    readonly demo_grid: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly demo_isUnlearned: (a: number) => number;
    readonly demo_metrics: (a: number, b: number, c: number) => [number, number, number, number];
    readonly demo_new: (a: number, b: number) => [number, number, number];
    readonly demo_points: (a: number) => [number, number];
    readonly demo_reset: (a: number) => void;
    readonly demo_unlearn: (a: number, b: number, c: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
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
