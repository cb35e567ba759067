# helpers shared by the torch scripts
def accuracy(pred, gold):
    return (pred == gold).mean()
