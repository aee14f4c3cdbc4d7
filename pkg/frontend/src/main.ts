/** Browser bootstrap: wire the editor to the local service. */

import { ApiClient } from "./api.js";
import { EditorUi } from "./ui.js";

// Synchronous zlib stream with stored (uncompressed) blocks: every
// inflater accepts it, masks are small, and it keeps the png module free
// of async plumbing in the browser. Node tooling injects real zlib.
export function storeOnlyDeflate(data: Uint8Array): Uint8Array {
  const blocks: number[] = [0x78, 0x01]; // zlib header
  let offset = 0;
  do {
    const len = Math.min(65535, data.length - offset);
    const final = offset + len >= data.length ? 1 : 0;
    blocks.push(final, len & 0xff, len >> 8, ~len & 0xff, (~len >> 8) & 0xff);
    for (let i = 0; i < len; i++) blocks.push(data[offset + i]!);
    offset += len;
    if (final) break;
  } while (offset < data.length);
  // adler32 trailer
  let a = 1, b = 0;
  for (const byte of data) {
    a = (a + byte) % 65521;
    b = (b + a) % 65521;
  }
  blocks.push((b >> 8) & 0xff, b & 0xff, (a >> 8) & 0xff, a & 0xff);
  return new Uint8Array(blocks);
}

declare const document: Document | undefined;

if (typeof document !== "undefined" && document.getElementById("app")) {
  const client = new ApiClient(
    globalThis.localStorage?.getItem("mmi_base_url") ?? "http://127.0.0.1:8080");
  const ui = new EditorUi(document.getElementById("app")!, {
    client,
    deflate: storeOnlyDeflate,
  });
  ui.mount();
}
