/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_labelview_free: (a: number, b: number) => void;
export const label_demo: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number];
export const labelview_dice: (a: number) => number;
export const labelview_height: (a: number) => number;
export const labelview_image: (a: number) => [number, number];
export const labelview_overlay: (a: number) => [number, number];
export const labelview_tissue_fraction: (a: number) => number;
export const labelview_width: (a: number) => number;
export const max_dims: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const memory_estimate: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const morphology: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
