/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * `[channels, h, w]` of [`Demo::feature_maps`].
     */
    featureDims(): Uint32Array;
    /**
     * First-layer activations `[channels, h, w]`, flattened.
     */
    featureMaps(pixels: Float32Array): Float32Array;
    iterations(): number;
    /**
     * Test-split report as JSON.
     */
    metrics(threshold: number): string;
    constructor(seed: number, n: number);
    predict(pixels: Float32Array): number;
    testImage(index: number): Float32Array;
    testLabel(index: number): number;
    testSize(): number;
    train(steps: number, learning_rate: number): Float64Array;
    validationLoss(): number;
}

export function imageSide(): number;

export function synthImage(seed: number, side: number, with_disk: boolean): Float32Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_featureDims: (a: number) => [number, number];
    readonly demo_featureMaps: (a: number, b: number, c: number) => [number, number, number, number];
    readonly demo_iterations: (a: number) => number;
    readonly demo_metrics: (a: number, b: number) => [number, number, number, number];
    readonly demo_new: (a: number, b: number) => [number, number, number];
    readonly demo_predict: (a: number, b: number, c: number) => [number, number, number];
    readonly demo_testImage: (a: number, b: number) => [number, number];
    readonly demo_testLabel: (a: number, b: number) => number;
    readonly demo_testSize: (a: number) => number;
    readonly demo_train: (a: number, b: number, c: number) => [number, number, number, number];
    readonly demo_validationLoss: (a: number) => [number, number, number];
    readonly imageSide: () => number;
    readonly synthImage: (a: number, b: number, c: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
