/** Client-side tagging-scheme logic.
 *
 * The server sends the flat tag list (e.g. ["O", "flavor-B", ...]); this
 * module reconstructs the scheme shape from it, derives tags for a
 * selected token span (humans select spans, the model needs tags), and
 * produces advisory warnings for ill-formed patterns. Warnings never
 * block submission: the server stays authoritative.
 */

export type SchemeKind = "BIOE" | "UBIOE" | "IOB";

export interface SchemeInfo {
  kind: SchemeKind;
  attributes: string[];
  tags: string[];
}

function splitTag(tag: string): { attr: string | null; pos: string } {
  if (tag === "O") return { attr: null, pos: "O" };
  const cut = tag.lastIndexOf("-");
  if (cut < 0) return { attr: "", pos: tag };
  return { attr: tag.slice(0, cut), pos: tag.slice(cut + 1) };
}

/** Recover scheme kind and attribute list from the server's tag list. */
export function parseScheme(tags: string[]): SchemeInfo {
  const positions = new Set<string>();
  const attributes: string[] = [];
  for (const tag of tags) {
    if (tag === "O") continue;
    const { attr, pos } = splitTag(tag);
    positions.add(pos);
    const name = attr === "" || attr === null ? "" : attr;
    if (!attributes.includes(name)) attributes.push(name);
  }
  let kind: SchemeKind = "IOB";
  if (positions.has("U")) kind = "UBIOE";
  else if (positions.has("E")) kind = "BIOE";
  return { kind, attributes, tags: [...tags] };
}

export function tagName(
  scheme: SchemeInfo,
  attribute: string,
  pos: string,
): string {
  return attribute === "" ? pos : `${attribute}-${pos}`;
}

/** Tags for one selected [start, end) span of the given attribute. */
export function spanTags(
  scheme: SchemeInfo,
  attribute: string,
  length: number,
): string[] {
  if (length < 1) throw new Error("span must cover at least one token");
  if (length === 1) {
    const head = scheme.kind === "UBIOE" ? "U" : "B";
    return [tagName(scheme, attribute, head)];
  }
  const middle = Array<string>(length - 2).fill(tagName(scheme, attribute, "I"));
  const last = scheme.kind === "IOB" ? "I" : "E";
  return [
    tagName(scheme, attribute, "B"),
    ...middle,
    tagName(scheme, attribute, last),
  ];
}

/** Advisory warnings for patterns the conservative decoder would drop.
 * The scan mirrors the server: a value is U, B I* E (BIOE/UBIOE, plus
 * bare B under BIOE), or B I* (IOB); anything else gets flagged. */
export function patternWarnings(
  scheme: SchemeInfo,
  tags: (string | null)[],
): string[] {
  const warnings: string[] = [];
  const names = tags.map((t) => t ?? "O");
  const n = names.length;
  let i = 0;
  while (i < n) {
    const { attr, pos } = splitTag(names[i]);
    if (pos === "O" || pos === "U") {
      i += 1;
      continue;
    }
    if (pos === "I" || pos === "E") {
      warnings.push(`position ${i}: ${names[i]} does not continue a span`);
      i += 1;
      continue;
    }
    let j = i + 1;
    while (j < n) {
      const next = splitTag(names[j]);
      if (next.pos === "I" && next.attr === attr) j += 1;
      else break;
    }
    if (scheme.kind === "IOB") {
      i = j;
      continue;
    }
    if (j < n) {
      const next = splitTag(names[j]);
      if (next.pos === "E" && next.attr === attr) {
        i = j + 1;
        continue;
      }
    }
    if (j === i + 1 && scheme.kind === "BIOE") {
      i = j; // bare B counts as a one-token value
      continue;
    }
    warnings.push(`position ${i}: span starting here is never closed`);
    i = j;
  }
  return warnings;
}
