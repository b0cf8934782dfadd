/**
 * Stroke buffer serialization. The GeoJSON written here is byte-for-byte the
 * format the classifier's training endpoint consumes: LineString features
 * with class, width_px, and coord_space properties, positions as [x, y] in
 * image pixel coordinates, and the scene id on the collection.
 */

export const STROKE_CLASSES = ["urban", "mining", "negative"] as const;

export type StrokeClass = (typeof STROKE_CLASSES)[number];

export interface Stroke {
  className: StrokeClass;
  widthPx: number;
  /** [x, y] pairs in image pixel space; x is column, y is row */
  points: [number, number][];
}

export interface StrokeFeature {
  type: "Feature";
  geometry: { type: "LineString"; coordinates: number[][] };
  properties: { class: string; width_px: number; coord_space: "pixel" };
}

export interface StrokeCollection {
  type: "FeatureCollection";
  features: StrokeFeature[];
  properties: { scene_id: string };
}

export function isStrokeClass(value: string): value is StrokeClass {
  return (STROKE_CLASSES as readonly string[]).includes(value);
}

export function toGeoJson(sceneId: string, strokes: readonly Stroke[]): StrokeCollection {
  return {
    type: "FeatureCollection",
    features: strokes.map((s) => ({
      type: "Feature",
      geometry: {
        type: "LineString",
        coordinates: s.points.map(([x, y]) => [x, y]),
      },
      properties: {
        class: s.className,
        width_px: s.widthPx,
        coord_space: "pixel",
      },
    })),
    properties: { scene_id: sceneId },
  };
}

/**
 * Parse a stroke collection back into the buffer representation, validating
 * everything this client is allowed to produce. Round-tripping through
 * toGeoJson must lose neither class nor width.
 */
export function fromGeoJson(doc: StrokeCollection): Stroke[] {
  return doc.features.map((feature, i) => {
    const props = feature.properties;
    if (!isStrokeClass(props.class)) {
      throw new Error(`feature ${i}: unknown stroke class ${JSON.stringify(props.class)}`);
    }
    if (!Number.isFinite(props.width_px) || props.width_px < 1) {
      throw new Error(`feature ${i}: width_px must be a positive number`);
    }
    if (feature.geometry.type !== "LineString") {
      throw new Error(`feature ${i}: this client only draws LineString strokes`);
    }
    const points = feature.geometry.coordinates.map((pos, j): [number, number] => {
      const [x, y] = pos;
      if (typeof x !== "number" || typeof y !== "number") {
        throw new Error(`feature ${i}: position ${j} is not an [x, y] pair`);
      }
      return [x, y];
    });
    return { className: props.class, widthPx: props.width_px, points };
  });
}
