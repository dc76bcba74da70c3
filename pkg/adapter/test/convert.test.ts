import fs from "node:fs";
import path from "node:path";
import { describe, expect, it } from "vitest";

import {
  convertContentList,
  defaultDocId,
  loadContentList,
  validateBundle,
  writeBundle,
} from "../src/convert";
import { ConversionError, DocumentBundle, ParserContentItem } from "../src/types";
import { FIXTURE_CONTENT_LIST, makeTmpDir, materializeFixtureAssets, writeFakePng } from "./helpers";

function convertFixture(root: string): DocumentBundle {
  const { imagesDir, pagesDir } = materializeFixtureAssets(root);
  const items = loadContentList(FIXTURE_CONTENT_LIST);
  return convertContentList(items, {
    docId: "fixture-doc",
    imagesDir,
    pagesDir,
    outDir: root,
  });
}

describe("convertContentList", () => {
  it("preserves per-kind element counts from the fixture", () => {
    const root = makeTmpDir("adapter-convert-");
    const bundle = convertFixture(root);
    const kinds = bundle.pages.flatMap((p) => p.elements.map((e) => e.kind));
    const counts: Record<string, number> = {};
    for (const k of kinds) counts[k] = (counts[k] ?? 0) + 1;
    expect(counts).toEqual({ title: 1, paragraph: 3, figure: 1, table: 1, equation: 1 });
  });

  it("keeps layout order within each page", () => {
    const root = makeTmpDir("adapter-convert-");
    const bundle = convertFixture(root);
    expect(bundle.pages.map((p) => p.elements.map((e) => e.kind))).toEqual([
      ["title", "paragraph", "figure"],
      ["paragraph", "equation", "table", "paragraph"],
    ]);
  });

  it("maps text_level >= 1 to title and joins caption arrays with newlines", () => {
    const root = makeTmpDir("adapter-convert-");
    const bundle = convertFixture(root);
    const title = bundle.pages[0].elements[0];
    expect(title.kind).toBe("title");
    expect(title.text).toBe("App Store Growth 2012-2015");
    const figure = bundle.pages[0].elements[2];
    expect(figure.text).toBe("Figure 1: Number of apps by store\nSource: vendor reports");
  });

  it("carries table caption and body on separate fields", () => {
    const root = makeTmpDir("adapter-convert-");
    const bundle = convertFixture(root);
    const table = bundle.pages[1].elements[2];
    expect(table.kind).toBe("table");
    expect(table.text).toBe("Table 1: App counts in millions");
    expect(table.ocr_text).toContain("<table>");
    expect(table.ocr_text).toContain("0,35");
  });

  it("concatenated page text survives the conversion byte for byte", () => {
    const root = makeTmpDir("adapter-convert-");
    const items = loadContentList(FIXTURE_CONTENT_LIST);
    const bundle = convertFixture(root);
    for (const page of bundle.pages) {
      const sourceTexts = items
        .filter((it) => it.page_idx === page.page_index)
        .map((it) =>
          Array.isArray(it.caption) ? it.caption.join("\n") : it.caption ?? it.text ?? ""
        );
      const converted = page.elements.map((e) => e.text ?? "");
      expect(converted.join("\n")).toBe(sourceTexts.join("\n"));
    }
  });

  it("writes image and render refs relative to the bundle directory", () => {
    const root = makeTmpDir("adapter-convert-");
    const bundle = convertFixture(root);
    const figure = bundle.pages[0].elements[2];
    expect(figure.image_ref).toBe(path.join("images", "fig_apps.png"));
    expect(fs.existsSync(path.join(root, figure.image_ref!))).toBe(true);
    expect(bundle.pages.map((p) => p.render_ref)).toEqual([
      path.join("pages", "page_0.png"),
      path.join("pages", "page_1.png"),
    ]);
  });

  it("declares empty pages for an empty content list when renders exist", () => {
    const root = makeTmpDir("adapter-convert-");
    const pagesDir = path.join(root, "pages");
    writeFakePng(path.join(pagesDir, "0.png"), "r0");
    writeFakePng(path.join(pagesDir, "1.png"), "r1");
    const bundle = convertContentList([], { docId: "empty", pagesDir, outDir: root });
    expect(bundle.pages.length).toBe(2);
    expect(bundle.pages.every((p) => p.elements.length === 0)).toBe(true);
    expect(bundle.pages[1].render_ref).toBe(path.join("pages", "1.png"));

    const bare = convertContentList([], { docId: "empty", outDir: root });
    expect(bare.pages).toEqual([]);
  });

  it("inserts empty filler pages so indices stay contiguous", () => {
    const root = makeTmpDir("adapter-convert-");
    const items: ParserContentItem[] = [
      { type: "text", text: "first", page_idx: 0 },
      { type: "text", text: "later", page_idx: 2 },
    ];
    const bundle = convertContentList(items, { docId: "gappy", outDir: root });
    expect(bundle.pages.map((p) => p.page_index)).toEqual([0, 1, 2]);
    expect(bundle.pages[1].elements).toEqual([]);
    expect(() => validateBundle(bundle)).not.toThrow();
  });

  it("rejects unresolvable image paths and lists every offender", () => {
    const root = makeTmpDir("adapter-convert-");
    const imagesDir = path.join(root, "images");
    writeFakePng(path.join(imagesDir, "ok.png"), "ok");
    const items: ParserContentItem[] = [
      { type: "image", img_path: "images/ok.png", page_idx: 0 },
      { type: "image", img_path: "images/gone.png", page_idx: 0 },
      { type: "table", table_body: "<table></table>", page_idx: 1 },
    ];
    let message = "";
    try {
      convertContentList(items, { docId: "broken", imagesDir, outDir: root });
    } catch (err) {
      expect(err).toBeInstanceOf(ConversionError);
      message = (err as Error).message;
    }
    expect(message).toContain("gone.png");
    expect(message).toContain("item 2");
    expect(message).not.toContain("ok.png");
  });
});

describe("loadContentList", () => {
  it("rejects non-array documents and malformed items", () => {
    const root = makeTmpDir("adapter-load-");
    const write = (name: string, body: string) => {
      const file = path.join(root, name);
      fs.writeFileSync(file, body);
      return file;
    };
    expect(() => loadContentList(write("obj.json", "{}"))).toThrow(ConversionError);
    expect(() => loadContentList(write("junk.json", "nope["))).toThrow(/not valid JSON/);
    expect(() =>
      loadContentList(write("badtype.json", JSON.stringify([{ type: "chart", page_idx: 0 }])))
    ).toThrow(/unknown type/);
    expect(() =>
      loadContentList(write("badpage.json", JSON.stringify([{ type: "text", page_idx: -1 }])))
    ).toThrow(/page_idx/);
    expect(() => loadContentList(path.join(root, "missing.json"))).toThrow(/not found/);
  });
});

describe("validateBundle", () => {
  const page = (idx: number, elements: object[]) => ({
    page_index: idx,
    render_ref: null,
    elements,
  });

  it("enforces the image_ref rules per kind", () => {
    const textWithRef = {
      doc_id: "d",
      source_meta: {},
      pages: [
        page(0, [{ kind: "paragraph", text: "x", image_ref: "a.png", ocr_text: null }]),
      ],
    } as unknown as DocumentBundle;
    expect(() => validateBundle(textWithRef)).toThrow(/must not carry image_ref/);

    const figureWithout = {
      doc_id: "d",
      source_meta: {},
      pages: [page(0, [{ kind: "figure", text: null, image_ref: null, ocr_text: null }])],
    } as unknown as DocumentBundle;
    expect(() => validateBundle(figureWithout)).toThrow(/requires image_ref/);
  });

  it("enforces contiguous zero-based page indices", () => {
    const skipped = {
      doc_id: "d",
      source_meta: {},
      pages: [page(0, []), page(2, [])],
    } as unknown as DocumentBundle;
    expect(() => validateBundle(skipped)).toThrow(/contiguous/);
  });
});

describe("writeBundle / defaultDocId", () => {
  it("round-trips through disk and derives doc ids from file names", () => {
    const root = makeTmpDir("adapter-write-");
    const bundle = convertFixture(root);
    const out = path.join(root, "bundle.json");
    writeBundle(out, bundle);
    expect(JSON.parse(fs.readFileSync(out, "utf-8"))).toEqual(JSON.parse(JSON.stringify(bundle)));

    expect(defaultDocId("/tmp/report_content_list.json")).toBe("report");
    expect(defaultDocId("scan.json")).toBe("scan");
  });
});
