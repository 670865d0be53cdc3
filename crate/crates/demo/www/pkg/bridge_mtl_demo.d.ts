/* tslint:disable */
/* eslint-disable */

/**
 * A small model trained one step at a time on four synthetic scenes.
 */
export class Playground {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Corrosion share per predicted element class for one scene.
     */
    condition_report(scene: number): string;
    loss_history(): Float64Array;
    /**
     * Training-set metrics of the current parameters as text.
     */
    metrics(): string;
    /**
     * `variant` is any configuration name (`MTL-A` … `MTL-L`,
     * `single-element`, `single-defect`, `merged`).
     */
    constructor(variant: string, seed: number, total_steps: number);
    overlay_height(): number;
    /**
     * Input, element mask, defect mask and hatched combination side by
     * side, as RGBA bytes of a `4·32 × 32` image.
     */
    overlay_rgba(scene: number): Uint8Array;
    overlay_width(): number;
    scene_count(): number;
    /**
     * Runs up to `n` optimiser steps and returns the last step record as
     * JSON (`null` once the schedule is finished).
     */
    step(n: number): string;
    steps_done(): number;
    total_steps(): number;
    /**
     * The same composite for the ground-truth labels.
     */
    truth_rgba(scene: number): Uint8Array;
}

/**
 * Loss, task weights and log-variance gradients at one point, as JSON.
 * For fixed task losses the minimum lies at `s = ln L` per task.
 */
export function uncertainty_point(loss_element: number, loss_defect: number, s_element: number, s_defect: number): string;

/**
 * Combined loss on an `n × n` grid of `(s_e, s_d)` spanning
 * `[s_min, s_max]` on both axes; row `i` holds `s_e = s_min + i·step`.
 */
export function uncertainty_surface(loss_element: number, loss_defect: number, s_min: number, s_max: number, n: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_playground_free: (a: number, b: number) => void;
    readonly playground_condition_report: (a: number, b: number) => [number, number, number, number];
    readonly playground_loss_history: (a: number) => [number, number];
    readonly playground_metrics: (a: number) => [number, number, number, number];
    readonly playground_new: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly playground_overlay_height: (a: number) => number;
    readonly playground_overlay_rgba: (a: number, b: number) => [number, number, number, number];
    readonly playground_overlay_width: (a: number) => number;
    readonly playground_scene_count: (a: number) => number;
    readonly playground_step: (a: number, b: number) => [number, number, number, number];
    readonly playground_steps_done: (a: number) => number;
    readonly playground_total_steps: (a: number) => number;
    readonly playground_truth_rgba: (a: number, b: number) => [number, number, number, number];
    readonly uncertainty_point: (a: number, b: number, c: number, d: number) => [number, number];
    readonly uncertainty_surface: (a: number, b: number, c: number, d: number, e: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
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
