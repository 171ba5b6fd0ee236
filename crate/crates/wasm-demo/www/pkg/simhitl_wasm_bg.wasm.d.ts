/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_corpus_free: (a: number, b: number) => void;
export const corpus_calibrate: (a: number, b: number, c: number) => [number, number, number, number];
export const corpus_customers: (a: number) => [number, number];
export const corpus_neighbors: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const corpus_new: (a: number, b: number, c: number, d: number) => [number, number, number];
export const corpus_setThreshold: (a: number, b: number) => [number, number];
export const textSimilarity: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
