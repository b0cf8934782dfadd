/**
 * Flat site map: equirectangular projection of site coordinates onto a
 * world image, each marker linking to the site's views.
 */

import type { SiteRecord, SiteStatus } from "./types.js";

export interface Marker {
  siteId: string;
  name: string;
  status: SiteStatus;
  x: number;
  y: number;
}

/** lon -180..180 maps to x 0..width, lat 90..-90 to y 0..height. */
export function project(
  lon: number,
  lat: number,
  width: number,
  height: number,
): [number, number] {
  return [((lon + 180) / 360) * width, ((90 - lat) / 180) * height];
}

export function markers(sites: SiteRecord[], width: number, height: number): Marker[] {
  return sites.map((site) => {
    const [x, y] = project(site.lon, site.lat, width, height);
    return { siteId: site.site_id, name: site.name, status: site.status, x, y };
  });
}
