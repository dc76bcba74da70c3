import fs from "node:fs";
import os from "node:os";
import path from "node:path";

// a real PNG signature followed by a tag keeps image payloads distinct
export function writeFakePng(file: string, tag: string): void {
  fs.mkdirSync(path.dirname(file), { recursive: true });
  fs.writeFileSync(file, Buffer.concat([Buffer.from("\x89PNG\r\n\x1a\n", "latin1"), Buffer.from(tag)]));
}

export function makeTmpDir(prefix: string): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), prefix));
}

export const FIXTURE_CONTENT_LIST = path.join(__dirname, "..", "fixtures", "content_list.json");

// image basenames the committed fixture refers to
export const FIXTURE_IMAGE_NAMES = ["fig_apps.png", "tab_counts.png"];

export function materializeFixtureAssets(root: string): { imagesDir: string; pagesDir: string } {
  const imagesDir = path.join(root, "images");
  const pagesDir = path.join(root, "pages");
  for (const name of FIXTURE_IMAGE_NAMES) {
    writeFakePng(path.join(imagesDir, name), name);
  }
  writeFakePng(path.join(pagesDir, "page_0.png"), "render-0");
  writeFakePng(path.join(pagesDir, "page_1.png"), "render-1");
  return { imagesDir, pagesDir };
}
