/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_footprint_free: (a: number, b: number) => void;
export const __wbg_toydenoiser_free: (a: number, b: number) => void;
export const footprint_center: (a: number) => number;
export const footprint_height: (a: number) => number;
export const footprint_rgba: (a: number) => [number, number];
export const footprint_size: (a: number) => number;
export const footprint_width: (a: number) => number;
export const fusion: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const fusion_curves: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
export const receptive_field: (a: number, b: number) => [number, number, number];
export const toydenoiser_new: (a: number, b: number) => [number, number, number];
export const toydenoiser_psnr: (a: number, b: number, c: number) => [number, number, number];
export const toydenoiser_rgba: (a: number, b: number, c: number) => [number, number, number, number];
export const toydenoiser_size: (a: number) => number;
export const toydenoiser_step: (a: number) => number;
export const toydenoiser_total: (a: number) => number;
export const toydenoiser_train: (a: number, b: number) => [number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
