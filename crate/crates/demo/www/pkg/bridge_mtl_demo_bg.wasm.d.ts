/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_playground_free: (a: number, b: number) => void;
export const playground_condition_report: (a: number, b: number) => [number, number, number, number];
export const playground_loss_history: (a: number) => [number, number];
export const playground_metrics: (a: number) => [number, number, number, number];
export const playground_new: (a: number, b: number, c: number, d: number) => [number, number, number];
export const playground_overlay_height: (a: number) => number;
export const playground_overlay_rgba: (a: number, b: number) => [number, number, number, number];
export const playground_overlay_width: (a: number) => number;
export const playground_scene_count: (a: number) => number;
export const playground_step: (a: number, b: number) => [number, number, number, number];
export const playground_steps_done: (a: number) => number;
export const playground_total_steps: (a: number) => number;
export const playground_truth_rgba: (a: number, b: number) => [number, number, number, number];
export const uncertainty_point: (a: number, b: number, c: number, d: number) => [number, number];
export const uncertainty_surface: (a: number, b: number, c: number, d: number, e: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
