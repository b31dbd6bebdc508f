/* tslint:disable */
/* eslint-disable */

export class Footprint {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    rgba(): Uint8Array;
    readonly center: number;
    readonly height: number;
    /**
     * Probe image side in pixels.
     */
    readonly size: number;
    readonly width: number;
}

export class ToyDenoiser {
    free(): void;
    [Symbol.dispose](): void;
    constructor(seed: number, sigma: number);
    psnr(kind: string): number;
    /**
     * RGBA bytes for `clean`, `noisy`, `posterior` or `mean`.
     */
    rgba(kind: string): Uint8Array;
    train(steps: number): number;
    readonly size: number;
    readonly step: number;
    readonly total: number;
}

/**
 * `[posterior mean, posterior variance]`.
 */
export function fusion(mu: number, prior_std: number, y: number, noise_std: number): Float64Array;

/**
 * `[xs, prior, likelihood, posterior]` densities, each `n` long.
 */
export function fusion_curves(mu: number, prior_std: number, y: number, noise_std: number, lo: number, hi: number, n: number): Float64Array;

/**
 * Gradient footprint of the center output for a network of `depth`.
 */
export function receptive_field(depth: number, seeds: number): Footprint;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_footprint_free: (a: number, b: number) => void;
    readonly __wbg_toydenoiser_free: (a: number, b: number) => void;
    readonly footprint_center: (a: number) => number;
    readonly footprint_height: (a: number) => number;
    readonly footprint_rgba: (a: number) => [number, number];
    readonly footprint_size: (a: number) => number;
    readonly footprint_width: (a: number) => number;
    readonly fusion: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly fusion_curves: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
    readonly receptive_field: (a: number, b: number) => [number, number, number];
    readonly toydenoiser_new: (a: number, b: number) => [number, number, number];
    readonly toydenoiser_psnr: (a: number, b: number, c: number) => [number, number, number];
    readonly toydenoiser_rgba: (a: number, b: number, c: number) => [number, number, number, number];
    readonly toydenoiser_size: (a: number) => number;
    readonly toydenoiser_step: (a: number) => number;
    readonly toydenoiser_total: (a: number) => number;
    readonly toydenoiser_train: (a: number, b: number) => [number, number, number];
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
