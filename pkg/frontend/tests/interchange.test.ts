import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";
import * as tf from "@tensorflow/tfjs";
import { describe, expect, it } from "vitest";

import { DataError } from "../src/errors.js";
import {
  CompressedManifestSchema,
  CompressedNetwork,
  NetworkBundle,
  NetworkManifestSchema,
  decodeBlob,
  encodeBlob,
  kernelFromInterchange,
  kernelToInterchange,
  readCompressedManifest,
  readNetworkManifest,
  sanitizeName,
  writeCompressedManifest,
  writeJsonFile,
  writeNetworkManifest,
} from "../src/interchange.js";
import { mulberry32, randomArray } from "../src/demo.js";

function tmpDir(): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), "interchange-"));
}

describe("raw blobs", () => {
  it("round-trips float32 values exactly", () => {
    const rand = mulberry32(7);
    const values = randomArray(rand, 64, 3.0);
    const decoded = decodeBlob(encodeBlob(values), [4, 16]);
    expect(Array.from(decoded)).toEqual(Array.from(values));
  });

  it("serializes little-endian", () => {
    const buf = encodeBlob([1.0]);
    expect(Array.from(buf)).toEqual([0x00, 0x00, 0x80, 0x3f]);
  });

  it("rejects a length mismatch", () => {
    expect(() => decodeBlob(encodeBlob([1, 2, 3]), [2, 2])).toThrow(DataError);
  });

  it("rejects non-finite payloads", () => {
    const buf = encodeBlob([1, 2]);
    buf.writeFloatLE(Number.NaN, 4);
    expect(() => decodeBlob(buf, [2])).toThrow(/non-finite/);
  });
});

describe("json documents", () => {
  it("writes sorted keys with a trailing newline, byte-deterministically", () => {
    const dir = tmpDir();
    const doc = { zebra: 1, alpha: { inner_b: [3, 2], inner_a: "x" } };
    writeJsonFile(path.join(dir, "a.json"), doc);
    writeJsonFile(path.join(dir, "b.json"), { alpha: { inner_a: "x", inner_b: [3, 2] }, zebra: 1 });
    const a = fs.readFileSync(path.join(dir, "a.json"));
    const b = fs.readFileSync(path.join(dir, "b.json"));
    expect(a.equals(b)).toBe(true);
    const text = a.toString("utf-8");
    expect(text.endsWith("\n")).toBe(true);
    expect(text.indexOf('"alpha"')).toBeLessThan(text.indexOf('"zebra"'));
  });

  it("sanitizes layer names for file use", () => {
    expect(sanitizeName("block1.conv/3x3")).toBe("block1.conv_3x3");
    expect(sanitizeName("plain_name-0")).toBe("plain_name-0");
  });
});

describe("kernel layout", () => {
  it("flattens (kh, kw, in, out) kernels into row-major (out, in, kh, kw)", () => {
    const [k, c, n] = [3, 2, 4];
    const hwio = tf.range(0, k * k * c * n).reshape([k, k, c, n]) as tf.Tensor4D;
    const data = kernelToInterchange(hwio);
    for (let o = 0; o < n; o++) {
      for (let i = 0; i < c; i++) {
        for (let y = 0; y < k; y++) {
          for (let x = 0; x < k; x++) {
            const flatOihw = ((o * c + i) * k + y) * k + x;
            const hwioValue = ((y * k + x) * c + i) * n + o;
            expect(data[flatOihw]).toBe(hwioValue);
          }
        }
      }
    }
  });

  it("round-trips through the interchange layout", () => {
    const rand = mulberry32(11);
    const hwio = tf.tensor4d(randomArray(rand, 3 * 3 * 5 * 7), [3, 3, 5, 7]);
    const back = kernelFromInterchange(kernelToInterchange(hwio), [7, 5, 3, 3]);
    expect(back.shape).toEqual([3, 3, 5, 7]);
    const diff = tf.max(tf.abs(tf.sub(hwio, back))).dataSync()[0];
    expect(diff).toBe(0);
  });
});

function smallBundle(): NetworkBundle {
  const rand = mulberry32(23);
  const geometry = [
    { name: "stem", n: 4, c: 3, k: 3, stride: 1, h_out: 6, w_out: 6 },
    { name: "block1.conv", n: 5, c: 4, k: 1, stride: 2, h_out: 3, w_out: 3 },
  ];
  return {
    layers: geometry.map((g) => ({
      entry: { ...g, compressible: g.name !== "stem", weight_blob: "", gradient_blob: "" },
      weights: randomArray(rand, g.n * g.c * g.k * g.k),
      gradients: randomArray(rand, g.n * g.c * g.k * g.k),
    })),
    metadata: { generator: "test" },
  };
}

describe("network manifests", () => {
  it("round-trips layers, tensors and metadata", () => {
    const dir = tmpDir();
    const bundle = smallBundle();
    const manifest = path.join(dir, "manifest.json");
    writeNetworkManifest(bundle, manifest);
    const loaded = readNetworkManifest(manifest);
    expect(loaded.metadata).toEqual({ generator: "test" });
    expect(loaded.layers.map((l) => l.entry.name)).toEqual(["stem", "block1.conv"]);
    expect(loaded.layers[0].entry.compressible).toBe(false);
    expect(Array.from(loaded.layers[1].weights)).toEqual(Array.from(bundle.layers[1].weights));
    expect(Array.from(loaded.layers[1].gradients)).toEqual(Array.from(bundle.layers[1].gradients));
    expect(loaded.layers[1].entry.weight_blob).toBe("block1.conv__w.bin");
  });

  it("rejects duplicate layer names", () => {
    const dir = tmpDir();
    const bundle = smallBundle();
    bundle.layers[1].entry = { ...bundle.layers[1].entry, name: "stem" };
    bundle.layers[1].weights = bundle.layers[0].weights;
    bundle.layers[1].gradients = bundle.layers[0].gradients;
    expect(() => writeNetworkManifest(bundle, path.join(dir, "manifest.json"))).toThrow(/duplicate/);
  });

  it("schema rejects missing keys and wrong types", () => {
    const good = {
      layers: [
        {
          name: "a",
          n: 1,
          c: 1,
          k: 1,
          stride: 1,
          h_out: 1,
          w_out: 1,
          compressible: true,
          weight_blob: "w.bin",
          gradient_blob: "g.bin",
        },
      ],
      metadata: {},
    };
    expect(NetworkManifestSchema.safeParse(good).success).toBe(true);
    const missing = structuredClone(good) as { layers: Array<Record<string, unknown>> };
    delete missing.layers[0].n;
    expect(NetworkManifestSchema.safeParse(missing).success).toBe(false);
    const negative = structuredClone(good);
    negative.layers[0].k = 0;
    expect(NetworkManifestSchema.safeParse(negative).success).toBe(false);
    const badBool = structuredClone(good) as { layers: Array<Record<string, unknown>> };
    badBool.layers[0].compressible = "yes";
    expect(NetworkManifestSchema.safeParse(badBool).success).toBe(false);
  });

  it("read rejects a truncated blob", () => {
    const dir = tmpDir();
    const manifest = path.join(dir, "manifest.json");
    writeNetworkManifest(smallBundle(), manifest);
    fs.writeFileSync(path.join(dir, "stem__w.bin"), Buffer.alloc(8));
    expect(() => readNetworkManifest(manifest)).toThrow(DataError);
  });
});

function compressedFixture(): CompressedNetwork {
  const rand = mulberry32(31);
  return {
    layers: [
      {
        entry: {
          name: "stem",
          variant: "pruned",
          kept_channels: [0, 2],
          r_bar: null,
          n: 4,
          c: 3,
          k: 3,
          stride: 1,
          h_out: 6,
          w_out: 6,
          blobs: {},
        },
        weights: randomArray(rand, 4 * 2 * 3 * 3),
      },
      {
        entry: {
          name: "block1.conv",
          variant: "decomposed",
          kept_channels: [0, 1, 2, 3],
          r_bar: 3,
          n: 5,
          c: 4,
          k: 1,
          stride: 2,
          h_out: 3,
          w_out: 3,
          blobs: {},
        },
        w1: randomArray(rand, 3 * 4 * 1 * 1),
        w2: randomArray(rand, 5 * 3 * 1 * 1),
      },
    ],
    metadata: {},
  };
}

describe("compressed manifests", () => {
  it("round-trips pruned and decomposed layers", () => {
    const dir = tmpDir();
    const manifest = path.join(dir, "manifest.json");
    const network = compressedFixture();
    writeCompressedManifest(network, manifest);
    const loaded = readCompressedManifest(manifest);
    expect(loaded.layers).toHaveLength(2);
    expect(loaded.layers[0].entry.variant).toBe("pruned");
    expect(Array.from(loaded.layers[0].weights!)).toEqual(Array.from(network.layers[0].weights!));
    expect(loaded.layers[1].entry.variant).toBe("decomposed");
    expect(loaded.layers[1].entry.r_bar).toBe(3);
    expect(Array.from(loaded.layers[1].w1!)).toEqual(Array.from(network.layers[1].w1!));
    expect(Array.from(loaded.layers[1].w2!)).toEqual(Array.from(network.layers[1].w2!));
  });

  it("schema rejects unknown variants and blob/variant mismatches", () => {
    const base = {
      name: "a",
      variant: "pruned",
      kept_channels: [0],
      r_bar: null,
      n: 1,
      c: 1,
      k: 1,
      stride: 1,
      h_out: 1,
      w_out: 1,
      blobs: { weights: { path: "w.bin", shape: [1, 1, 1, 1] } },
    };
    expect(CompressedManifestSchema.safeParse({ layers: [base], metadata: {} }).success).toBe(true);
    const badVariant = { ...base, variant: "shrunk" };
    expect(CompressedManifestSchema.safeParse({ layers: [badVariant], metadata: {} }).success).toBe(false);
    const missingFactors = { ...base, variant: "decomposed" };
    expect(CompressedManifestSchema.safeParse({ layers: [missingFactors], metadata: {} }).success).toBe(false);
  });

  it("rejects kept channels that exceed the layer width or repeat", () => {
    const dir = tmpDir();
    const network = compressedFixture();
    network.layers[0].entry = { ...network.layers[0].entry, kept_channels: [0, 3] };
    writeCompressedManifest(network, path.join(dir, "a.json"));
    expect(() => readCompressedManifest(path.join(dir, "a.json"))).toThrow(/exceed/);

    const repeats = compressedFixture();
    repeats.layers[0].entry = { ...repeats.layers[0].entry, kept_channels: [1, 1] };
    writeCompressedManifest(repeats, path.join(dir, "b.json"));
    expect(() => readCompressedManifest(path.join(dir, "b.json"))).toThrow(/increasing/);
  });
});
