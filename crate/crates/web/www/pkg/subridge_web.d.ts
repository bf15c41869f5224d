/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Six rows of `count` values over `φs ∈ [φ, phi_s_max]`: the grid,
     * risk at `M = 1, 10, ∞`, the `M = ∞` GCV limit and the `M = 2` GCV
     * limit.
     */
    curves(phi: number, lambda: number, phi_s_max: number, count: number): Float64Array;
    /**
     * `count` points `[λ, φs, risk]` along the segment from `(λ*, φ)` to
     * `(0, φs*)`; empty when either optimum is infinite.
     */
    equivalence_segment(phi: number, count: number): Float64Array;
    /**
     * `kind` is `"ar1"` (uses `rho_ar1` and `p_ref`) or `"isotropic"`
     * (signal energy `rho2`).
     */
    constructor(kind: string, rho_ar1: number, p_ref: number, rho2: number, sigma2: number);
    null_risk(): number;
    /**
     * `[λ*, φs*, R*]`, the optimal ridge penalty on full data, the optimal
     * ridgeless subsample ratio and the shared minimum risk. Infinite
     * arguments mean the null predictor is optimal.
     */
    optimum(phi: number): Float64Array;
    /**
     * Row-major `n_lambda x n_phi_s` risks for `λ ∈ [0, lambda_max]` and
     * `φs ∈ [φ, phi_s_max]`; `m = 0` means `M = ∞`. Undefined cells are NaN.
     */
    risk_surface(phi: number, lambda_max: number, phi_s_max: number, n_lambda: number, n_phi_s: number, m: number): Float64Array;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_curves: (a: number, b: number, c: number, d: number, e: number) => [number, number];
    readonly demo_equivalence_segment: (a: number, b: number, c: number) => [number, number];
    readonly demo_new: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
    readonly demo_null_risk: (a: number) => number;
    readonly demo_optimum: (a: number, b: number) => [number, number];
    readonly demo_risk_surface: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
