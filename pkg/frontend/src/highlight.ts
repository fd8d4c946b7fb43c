/** Small hand-rolled syntax highlighter for C-family source files.
 *
 * One alternation pass: comments, string and char literals, preprocessor
 * lines, numbers, keywords. Everything is HTML-escaped before the span
 * wrappers go on, so arbitrary file bodies render safely.
 */

const KEYWORDS = new Set([
  "auto", "break", "case", "catch", "char", "class", "const", "constexpr",
  "continue", "default", "delete", "do", "double", "else", "enum", "extern",
  "float", "for", "goto", "if", "inline", "int", "long", "namespace", "new",
  "nullptr", "operator", "private", "protected", "public", "return", "short",
  "signed", "sizeof", "static", "struct", "switch", "template", "this",
  "throw", "try", "typedef", "typename", "union", "unsigned", "using",
  "virtual", "void", "volatile", "while",
]);

const TOKEN = new RegExp(
  [
    String.raw`\/\*[\s\S]*?(?:\*\/|(?![\s\S]))`, // block comment, maybe unterminated
    String.raw`\/\/[^\n]*`, // line comment
    String.raw`"(?:\\.|[^"\\\n])*"?`, // string literal
    String.raw`'(?:\\.|[^'\\\n])*'?`, // char literal
    String.raw`^[ \t]*#[^\n]*`, // preprocessor line
    String.raw`\b(?:0[xX][0-9a-fA-F]+|\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)\b`, // number
    String.raw`\b[A-Za-z_]\w*\b`, // identifier
  ].join("|"),
  "gm",
);

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function classify(token: string): string | null {
  if (token.startsWith("/*") || token.startsWith("//")) return "hl-comment";
  if (token.startsWith('"') || token.startsWith("'")) return "hl-string";
  if (/^[ \t]*#/.test(token)) return "hl-preproc";
  if (/^(?:0[xX][0-9a-fA-F]+|\d)/.test(token)) return "hl-number";
  if (KEYWORDS.has(token)) return "hl-keyword";
  return null;
}

/** Render source text to highlighted HTML (no surrounding <pre>). */
export function highlight(source: string): string {
  let html = "";
  let cursor = 0;
  for (const match of source.matchAll(TOKEN)) {
    const start = match.index ?? 0;
    if (start > cursor) html += escapeHtml(source.slice(cursor, start));
    const token = match[0];
    const cls = classify(token);
    html += cls
      ? `<span class="${cls}">${escapeHtml(token)}</span>`
      : escapeHtml(token);
    cursor = start + token.length;
  }
  if (cursor < source.length) html += escapeHtml(source.slice(cursor));
  return html;
}
