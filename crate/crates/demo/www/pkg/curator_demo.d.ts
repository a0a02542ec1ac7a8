/* tslint:disable */
/* eslint-disable */
export function cluster(xy: Float64Array, k: number, seed: number): Uint32Array;
export function quotas(sizes: Uint32Array, alpha: number): Uint32Array;
export function select(labels: Uint32Array, scores: Float64Array, alpha: number): Uint32Array;
export class Blobs {
  free(): void;
  xy(): Float64Array;
  constructor(k: number, per: number, spread: number, seed: number);
  quality(): Float64Array;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
  readonly memory: WebAssembly.Memory;
  readonly __wbg_blobs_free: (a: number, b: number) => void;
  readonly blobs_new: (a: number, b: number, c: number, d: number) => number;
  readonly blobs_quality: (a: number) => [number, number];
  readonly blobs_xy: (a: number) => [number, number];
  readonly cluster: (a: number, b: number, c: number, d: number) => [number, number, number, number];
  readonly quotas: (a: number, b: number, c: number) => [number, number, number, number];
  readonly select: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
  readonly __wbindgen_export_0: WebAssembly.Table;
  readonly __wbindgen_malloc: (a: number, b: number) => number;
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
