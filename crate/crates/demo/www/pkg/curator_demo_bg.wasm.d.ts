/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_blobs_free: (a: number, b: number) => void;
export const blobs_new: (a: number, b: number, c: number, d: number) => number;
export const blobs_quality: (a: number) => [number, number];
export const blobs_xy: (a: number) => [number, number];
export const cluster: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const quotas: (a: number, b: number, c: number) => [number, number, number, number];
export const select: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const __wbindgen_export_0: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
