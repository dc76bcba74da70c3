import fs from "node:fs";
import path from "node:path";

import {
  BundleElement,
  BundlePage,
  ConversionError,
  DocumentBundle,
  ElementKind,
  ParserContentItem,
} from "./types";

const KNOWN_TYPES = new Set(["text", "image", "table", "equation"]);
const TEXT_KINDS = new Set<ElementKind>(["paragraph", "title", "equation"]);

export function loadContentList(file: string): ParserContentItem[] {
  let raw: string;
  try {
    raw = fs.readFileSync(file, { encoding: "utf-8" });
  } catch {
    throw new ConversionError(`content list not found: ${file}`);
  }
  let parsed: unknown;
  try {
    parsed = JSON.parse(raw);
  } catch (err) {
    throw new ConversionError(`content list is not valid JSON: ${(err as Error).message}`);
  }
  if (!Array.isArray(parsed)) {
    throw new ConversionError("content list must be a JSON array");
  }

  const items: ParserContentItem[] = [];
  parsed.forEach((entry, i) => {
    if (typeof entry !== "object" || entry === null || Array.isArray(entry)) {
      throw new ConversionError(`item ${i} must be an object`);
    }
    const item = entry as ParserContentItem;
    if (typeof item.type !== "string" || !KNOWN_TYPES.has(item.type)) {
      throw new ConversionError(`item ${i} has unknown type ${JSON.stringify(item.type)}`);
    }
    if (!Number.isInteger(item.page_idx) || item.page_idx < 0) {
      throw new ConversionError(`item ${i} page_idx must be a non-negative integer`);
    }
    items.push(item);
  });
  return items;
}

function joinCaption(caption: string | string[] | undefined): string | null {
  if (caption === undefined || caption === null) return null;
  if (typeof caption === "string") return caption;
  return caption.join("\n");
}

// Page renders are matched by the trailing integer in the file name,
// so page_0.png, render-3.jpg, and 12.png all wire up.
const RENDER_INDEX = /(\d+)\.[A-Za-z0-9]+$/;

export function scanPageRenders(pagesDir: string | undefined): Map<number, string> {
  const renders = new Map<number, string>();
  if (!pagesDir) return renders;
  let names: string[];
  try {
    names = fs.readdirSync(pagesDir);
  } catch {
    throw new ConversionError(`pages directory not found: ${pagesDir}`);
  }
  for (const name of names.sort()) {
    const match = RENDER_INDEX.exec(name);
    if (!match) continue;
    const index = parseInt(match[1], 10);
    if (!renders.has(index)) {
      renders.set(index, path.join(pagesDir, name));
    }
  }
  return renders;
}

export interface ConvertOptions {
  docId: string;
  imagesDir?: string;
  pagesDir?: string;
  // refs in the output are written relative to this directory (where the
  // bundle JSON will live), matching how the ingest pipeline resolves them
  outDir: string;
  sourceName?: string;
}

export function convertContentList(
  items: ParserContentItem[],
  opts: ConvertOptions
): DocumentBundle {
  if (!opts.docId) {
    throw new ConversionError("doc_id must be non-empty");
  }
  const renders = scanPageRenders(opts.pagesDir);

  const offenders: string[] = [];
  const resolveImage = (item: ParserContentItem, i: number): string | null => {
    if (!item.img_path) {
      offenders.push(`item ${i} (${item.type}) has no img_path`);
      return null;
    }
    const resolved = path.join(opts.imagesDir ?? ".", path.basename(item.img_path));
    if (!fs.existsSync(resolved)) {
      offenders.push(`item ${i} (${item.type}) img_path missing on disk: ${item.img_path}`);
      return null;
    }
    return path.relative(opts.outDir, resolved);
  };

  const byPage = new Map<number, BundleElement[]>();
  items.forEach((item, i) => {
    let element: BundleElement;
    switch (item.type) {
      case "text": {
        const kind: ElementKind =
          typeof item.text_level === "number" && item.text_level >= 1 ? "title" : "paragraph";
        element = { kind, text: item.text ?? "", image_ref: null, ocr_text: null };
        break;
      }
      case "equation":
        element = { kind: "equation", text: item.text ?? "", image_ref: null, ocr_text: null };
        break;
      case "image":
        element = {
          kind: "figure",
          text: joinCaption(item.caption),
          image_ref: resolveImage(item, i),
          ocr_text: null,
        };
        break;
      case "table":
        element = {
          kind: "table",
          text: joinCaption(item.caption),
          image_ref: resolveImage(item, i),
          ocr_text: item.table_body ?? null,
        };
        break;
      default:
        throw new ConversionError(`item ${i} has unknown type ${JSON.stringify(item.type)}`);
    }
    const bucket = byPage.get(item.page_idx);
    if (bucket) {
      bucket.push(element);
    } else {
      byPage.set(item.page_idx, [element]);
    }
  });

  if (offenders.length) {
    throw new ConversionError(`unresolvable image references:\n  ${offenders.join("\n  ")}`);
  }

  let pageCount = 0;
  for (const idx of byPage.keys()) pageCount = Math.max(pageCount, idx + 1);
  for (const idx of renders.keys()) pageCount = Math.max(pageCount, idx + 1);

  const pages: BundlePage[] = [];
  for (let idx = 0; idx < pageCount; idx++) {
    const renderPath = renders.get(idx);
    pages.push({
      page_index: idx,
      render_ref: renderPath ? path.relative(opts.outDir, renderPath) : null,
      elements: byPage.get(idx) ?? [],
    });
  }

  return {
    doc_id: opts.docId,
    source_meta: {
      origin: "content_list",
      ...(opts.sourceName ? { content_list: opts.sourceName } : {}),
    },
    pages,
  };
}

// Mirror of the ingest-side schema rules, so a conversion failure surfaces
// here rather than in a separate process later.
export function validateBundle(bundle: DocumentBundle): void {
  if (!bundle.doc_id) throw new ConversionError("bundle.doc_id must be non-empty");
  bundle.pages.forEach((page, pos) => {
    if (page.page_index !== pos) {
      throw new ConversionError(
        `page_index must be 0-based and contiguous, got ${page.page_index} at position ${pos}`
      );
    }
    page.elements.forEach((element, e) => {
      const where = `page ${pos} element ${e}`;
      if (TEXT_KINDS.has(element.kind)) {
        if (element.image_ref !== null) {
          throw new ConversionError(`${where}: ${element.kind} must not carry image_ref`);
        }
      } else if (element.kind === "figure" || element.kind === "table") {
        if (!element.image_ref) {
          throw new ConversionError(`${where}: ${element.kind} requires image_ref`);
        }
      } else {
        throw new ConversionError(`${where}: unknown kind ${JSON.stringify(element.kind)}`);
      }
    });
  });
}

export function writeBundle(file: string, bundle: DocumentBundle): void {
  validateBundle(bundle);
  fs.mkdirSync(path.dirname(file), { recursive: true });
  fs.writeFileSync(file, JSON.stringify(bundle, null, 2) + "\n", { encoding: "utf-8" });
}

export function defaultDocId(contentListFile: string): string {
  let base = path.basename(contentListFile).replace(/\.[^.]+$/, "");
  if (base.endsWith("_content_list")) {
    base = base.slice(0, -"_content_list".length);
  }
  return base || "document";
}
