#!/usr/bin/env node
import path from "node:path";
import { parseArgs } from "node:util";

import { ConversionError } from "./types";
import { convertContentList, defaultDocId, loadContentList, writeBundle } from "./convert";
import { MockWireServer } from "./mockServer";

const USAGE = `usage:
  adapter convert --content-list FILE --out BUNDLE.json [--images DIR] [--pages DIR] [--doc-id ID]
  adapter serve-mock [--port P] [--seed S]`;

function runConvert(argv: string[]): number {
  const { values } = parseArgs({
    args: argv,
    options: {
      "content-list": { type: "string" },
      images: { type: "string" },
      pages: { type: "string" },
      out: { type: "string" },
      "doc-id": { type: "string" },
    },
  });
  const contentList = values["content-list"];
  const out = values.out;
  if (!contentList || !out) {
    process.stderr.write(`convert needs --content-list and --out\n${USAGE}\n`);
    return 2;
  }
  const items = loadContentList(contentList);
  const bundle = convertContentList(items, {
    docId: values["doc-id"] ?? defaultDocId(contentList),
    imagesDir: values.images,
    pagesDir: values.pages,
    outDir: path.dirname(path.resolve(out)),
    sourceName: path.basename(contentList),
  });
  writeBundle(out, bundle);
  const elements = bundle.pages.reduce((n, p) => n + p.elements.length, 0);
  process.stdout.write(
    `wrote ${out}: doc_id=${bundle.doc_id} pages=${bundle.pages.length} elements=${elements}\n`
  );
  return 0;
}

async function runServeMock(argv: string[]): Promise<number> {
  const { values } = parseArgs({
    args: argv,
    options: {
      port: { type: "string" },
      seed: { type: "string" },
    },
  });
  const server = new MockWireServer({
    port: values.port ? parseInt(values.port, 10) : 8111,
    seed: values.seed,
  });
  await server.start();
  process.stdout.write(`mock wire server listening on ${server.baseUrl}\n`);
  // the open listener keeps the process alive until interrupted
  return 0;
}

export async function main(argv: string[]): Promise<number> {
  const [command, ...rest] = argv;
  try {
    if (command === "convert") return runConvert(rest);
    if (command === "serve-mock") return runServeMock(rest);
  } catch (err) {
    if (err instanceof ConversionError) {
      process.stderr.write(`error: ${err.message}\n`);
      return 1;
    }
    throw err;
  }
  process.stderr.write(`${USAGE}\n`);
  return 2;
}

if (require.main === module) {
  main(process.argv.slice(2)).then((code) => {
    if (code !== 0) process.exitCode = code;
  });
}
