// Item shape emitted by layout parsers (MinerU-style content lists).
// Only the documented fields are read; anything else passes through unremarked.
export interface ParserContentItem {
  type: string; // text | image | table | equation
  text?: string;
  text_level?: number; // headings carry a level >= 1
  caption?: string | string[];
  img_path?: string;
  table_body?: string;
  page_idx: number;
}

// Canonical bundle format consumed by the ingest pipeline.
export type ElementKind = "paragraph" | "title" | "equation" | "figure" | "table";

export interface BundleElement {
  kind: ElementKind;
  text: string | null;
  image_ref: string | null;
  ocr_text: string | null;
}

export interface BundlePage {
  page_index: number;
  render_ref: string | null;
  elements: BundleElement[];
}

export interface DocumentBundle {
  doc_id: string;
  source_meta: Record<string, unknown>;
  pages: BundlePage[];
}

export class ConversionError extends Error {}
