// Scripted replies for the engine's wire protocol, kept as pure functions
// so the HTTP layer stays a thin shell and every response is a function of
// (seed, request) alone.

import crypto from "node:crypto";

export const DEFAULT_SEED = "mock";
export const DIM = 32;

const LABEL_TEMPLATE = (label: string) => `a photo of a ${label}`;
const GARBLE_ALWAYS = "MOCK_GARBLE_ALWAYS";

const FACT_RE = /code of item (\w+) is ([\w-]+)/g;
const QUESTION_RE = /What is the code of item (\w+)\?/;

const PAGE_LEVELS = [
  "level_1_entity_integrated",
  "level_2_detailed_content",
  "level_3_macro_hierarchy",
  "level_4_context_restoration",
];

// served when a chunk carries no item-code facts
const APP_STORE_PAIRS = [
  { query: "Which app store had more apps in 2015?", answer: "Google Play Store" },
  { query: "How many apps were in the Apple App Store in 2015?", answer: "1,5 million" },
  { query: "What was the number of apps in the Google Play Store in 2015?", answer: "1,6 million" },
  {
    query: "In which year did the number of apps in both stores start to increase significantly?",
    answer: "2013",
  },
  { query: "How many apps were in the Apple App Store in 2012?", answer: "0,5 million" },
  { query: "What was the number of apps in the Google Play Store in 2012?", answer: "0,35 million" },
];

export type PromptRole = "doc2query" | "doc2query_page" | "answer" | "answer_page" | "judge";

// sha256(first 64 chars of the system prompt), first 16 hex chars.
// One entry per prompt the engine ships; anything else is a 400.
export const FINGERPRINTS: Record<string, PromptRole> = {
  "22377ffc7cc46b3d": "doc2query",
  "2f90cd5fd68dec32": "doc2query_page",
  "81412eb2903da856": "answer",
  "3007aa4ed847293b": "answer_page",
  "5001125248eff9ac": "judge",
};

export function promptFingerprint(systemText: string): string {
  return crypto.createHash("sha256").update(systemText.slice(0, 64), "utf-8").digest("hex").slice(0, 16);
}

// -- embeddings -------------------------------------------------------------

export function hashRawVector(seed: string, text: string, dim: number = DIM): number[] {
  const out: number[] = [];
  let counter = 0;
  while (out.length < dim) {
    const digest = crypto.createHash("sha256").update(`${seed}:${counter}:${text}`, "utf-8").digest();
    for (const b of digest) out.push((b - 127.5) / 127.5);
    counter += 1;
  }
  return out.slice(0, dim);
}

export function l2Normalize(vec: number[]): number[] {
  let sq = 0;
  for (const v of vec) sq += v * v;
  const norm = Math.sqrt(sq);
  return vec.map((v) => v / norm);
}

export function payloadSha256(dataUri: string): string {
  const b64 = dataUri.slice(dataUri.indexOf(",") + 1);
  return crypto.createHash("sha256").update(Buffer.from(b64, "base64")).digest("hex");
}

export function embedText(seed: string, text: string, imageLabels: Map<string, string>, defaultLabel: string): number[] {
  const source = text.startsWith("data:image/")
    ? LABEL_TEMPLATE(imageLabels.get(payloadSha256(text)) ?? defaultLabel)
    : text;
  return l2Normalize(hashRawVector(seed, source));
}

// -- chat -------------------------------------------------------------------

interface ChatMessagePart {
  type?: string;
  text?: string;
}
interface ChatMessage {
  role?: string;
  content?: ChatMessagePart[];
}
export interface ChatPayload {
  model?: string;
  messages?: ChatMessage[];
}

export function splitChatTexts(payload: ChatPayload): { system: string; user: string } {
  let system = "";
  const user: string[] = [];
  for (const msg of payload.messages ?? []) {
    const texts = (msg.content ?? [])
      .filter((p) => p && p.type === "text")
      .map((p) => p.text ?? "");
    if (msg.role === "system" && !system) {
      system = texts[0] ?? "";
    } else {
      user.push(...texts);
    }
  }
  return { system, user: user.join("\n") };
}

function doc2queryReply(userText: string, pageMode: boolean): string {
  if (userText.includes(GARBLE_ALWAYS)) {
    return "I could not produce anything structured for this one, sorry.";
  }
  let pairs: Array<Record<string, string>> = [];
  for (const m of userText.matchAll(FACT_RE)) {
    pairs.push({ query: `What is the code of item ${m[1]}?`, answer: m[2] });
  }
  if (!pairs.length) pairs = APP_STORE_PAIRS.map((p) => ({ ...p }));
  if (pageMode) {
    pairs = pairs.map((p, i) => ({ ...p, level: PAGE_LEVELS[i % PAGE_LEVELS.length] }));
  }
  return "Here are the query-answer pairs:\n\n```json\n" + JSON.stringify(pairs, null, 2) + "\n```";
}

function answerReply(userText: string, pageMode: boolean): string {
  const q = QUESTION_RE.exec(userText);
  if (q) {
    // item matched \w+ above, so it is safe to splice into a pattern
    const fact = new RegExp(`code of item ${q[1]} is ([\\w-]+)`).exec(userText);
    if (fact) {
      return `The context states that the code of item ${q[1]} is ${fact[1]}.\n\nFinal Answer: ${fact[1]}`;
    }
  }
  return pageMode ? "Based on the provided documents, I cannot answer this question." : "I don't know.";
}

function normalizeAnswer(text: string): string {
  return text
    .toLowerCase()
    .replace(/[^\w\s]/g, "")
    .replace(/\s+/g, " ")
    .trim();
}

function judgeReply(userText: string): string {
  const refMatch = /Reference Answer: ([\s\S]*?)\nCandidate Answer:/.exec(userText);
  const candMatch = /Candidate Answer: ([\s\S]*)$/.exec(userText);
  const ref = refMatch ? refMatch[1] : "";
  const cand = candMatch ? candMatch[1] : "";

  const refUnans = ["not answerable", "unanswerable"].includes(normalizeAnswer(ref));
  const candLow = cand.toLowerCase();
  const candUnans =
    candLow.includes("cannot answer") ||
    candLow.includes("don't know") ||
    normalizeAnswer(cand).includes("dont know");

  let score: number;
  if (refUnans || candUnans) {
    score = refUnans && candUnans ? 1 : 0;
  } else {
    score = normalizeAnswer(ref) === normalizeAnswer(cand) ? 1 : 0;
  }
  return `Score: ${score}`;
}

export function chatReply(role: PromptRole, userText: string): string {
  switch (role) {
    case "doc2query":
      return doc2queryReply(userText, false);
    case "doc2query_page":
      return doc2queryReply(userText, true);
    case "answer":
      return answerReply(userText, false);
    case "answer_page":
      return answerReply(userText, true);
    case "judge":
      return judgeReply(userText);
  }
}

// -- serialization ----------------------------------------------------------

// JSON with recursively sorted object keys, so identical response objects
// always serialize to identical bytes.
export function stableStringify(value: unknown): string {
  if (value === null || typeof value !== "object") {
    return JSON.stringify(value);
  }
  if (Array.isArray(value)) {
    return "[" + value.map(stableStringify).join(",") + "]";
  }
  const entries = Object.entries(value as Record<string, unknown>)
    .filter(([, v]) => v !== undefined)
    .sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0));
  return "{" + entries.map(([k, v]) => JSON.stringify(k) + ":" + stableStringify(v)).join(",") + "}";
}
