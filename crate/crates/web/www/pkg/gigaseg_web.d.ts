/* tslint:disable */
/* eslint-disable */

/**
 * Synthetic tissue image, its recipe label and the overlap with the
 * generator's reference mask.
 */
export class LabelView {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * RGBA pixels of the synthetic image.
     */
    image(): Uint8Array;
    /**
     * RGBA pixels of the image with the label tinted and disagreements with
     * the reference marked.
     */
    overlay(): Uint8Array;
    readonly dice: number;
    readonly height: number;
    readonly tissue_fraction: number;
    readonly width: number;
}

export function label_demo(seed: number, height: number, width: number, background_threshold: number, median_kernel: number, morph_size: number, erode_iterations: number, dilate_iterations: number): LabelView;

/**
 * Largest `[height, width]` of the given aspect that trains within
 * `budget_bytes`.
 */
export function max_dims(budget_bytes: number, aspect_height: number, aspect_width: number, workers: number): Uint32Array;

/**
 * Planner output for one training step as JSON.
 */
export function memory_estimate(height: number, width: number, element_width: number, workers: number): string;

/**
 * Applies `op` (`median`, `erode`, `dilate` or `fill`) to a 0/255 mask.
 */
export function morphology(op: string, mask: Uint8Array, height: number, width: number, size: number, iterations: number): Uint8Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_labelview_free: (a: number, b: number) => void;
    readonly label_demo: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number];
    readonly labelview_dice: (a: number) => number;
    readonly labelview_height: (a: number) => number;
    readonly labelview_image: (a: number) => [number, number];
    readonly labelview_overlay: (a: number) => [number, number];
    readonly labelview_tissue_fraction: (a: number) => number;
    readonly labelview_width: (a: number) => number;
    readonly max_dims: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly memory_estimate: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly morphology: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number, number];
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
