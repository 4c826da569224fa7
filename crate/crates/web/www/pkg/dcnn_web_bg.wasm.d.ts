/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_featureDims: (a: number) => [number, number];
export const demo_featureMaps: (a: number, b: number, c: number) => [number, number, number, number];
export const demo_iterations: (a: number) => number;
export const demo_metrics: (a: number, b: number) => [number, number, number, number];
export const demo_new: (a: number, b: number) => [number, number, number];
export const demo_predict: (a: number, b: number, c: number) => [number, number, number];
export const demo_testImage: (a: number, b: number) => [number, number];
export const demo_testLabel: (a: number, b: number) => number;
export const demo_testSize: (a: number) => number;
export const demo_train: (a: number, b: number, c: number) => [number, number, number, number];
export const demo_validationLoss: (a: number) => [number, number, number];
export const imageSide: () => number;
export const synthImage: (a: number, b: number, c: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
