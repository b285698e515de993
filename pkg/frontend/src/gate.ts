// Listen-before-choosing gate: a choice is only allowed once both clips of
// the current pair have been played to the end. Resets for every new task.

export class PlaybackGate {
  private played = new Set<'a' | 'b'>();

  markEnded(which: 'a' | 'b'): void {
    this.played.add(which);
  }

  get bothPlayed(): boolean {
    return this.played.has('a') && this.played.has('b');
  }

  reset(): void {
    this.played.clear();
  }
}
